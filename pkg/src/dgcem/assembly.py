"""IPDG elasticity operators on the block-wise DG space.

The bilinear form is split into three pieces that are assembled
independently and combined per configuration::

    A = K + (gamma / h) P - (Q + eta Q^T)

with ``K`` the cellwise stiffness, ``P`` the jump penalty (matrix jump
against {C} plus vector jump against {D}) and ``Q`` the consistency term
``{sigma(u)} : [[v]]``. ``K`` and ``P`` are symmetrised entrywise, so for
``eta = 1`` the result is exactly symmetric.

Every operator can be restricted to an :class:`~dgcem.grid.OversampleRegion`;
coarse edges on the region boundary inside the domain are then treated like
domain-boundary edges (one-sided trace and flux), which imposes the zero
Dirichlet condition weakly.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import kernels
from .grid import (
    GAUSS_POINTS,
    GAUSS_WEIGHTS,
    QUAD_POINTS,
    QUAD_WEIGHTS,
    Mesh,
    OversampleRegion,
    build_mesh,
    q1_shape,
    whole_domain,
)
from .media import VoigtTensor, WeightField, material_from_modulus, voigt_tensor

log = logging.getLogger(__name__)

SCHEMES = {1: "SIPG", 0: "IIPG", -1: "NIPG"}
DEFAULT_GAMMA = 8.0


@dataclass(frozen=True)
class AssemblyConfig:
    gamma: float = DEFAULT_GAMMA
    eta: int = 1

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"penalty parameter must be positive, got {self.gamma}")
        if self.eta not in SCHEMES:
            raise ValueError(f"eta must be one of -1, 0, 1, got {self.eta}")

    @property
    def scheme(self) -> str:
        return SCHEMES[self.eta]


def _reference_stiffness(hx: float, hy: float) -> tuple[np.ndarray, np.ndarray]:
    """8x8 Q1 stiffness for unit lambda and unit mu on an hx-by-hy cell."""
    _, dN = q1_shape(QUAD_POINTS[:, 0], QUAD_POINTS[:, 1])
    G = dN / np.array([hx, hy])  # (4 qp, 4 nodes, 2)
    B = np.zeros((4, 3, 8))
    B[:, 0, 0::2] = G[..., 0]
    B[:, 1, 1::2] = G[..., 1]
    B[:, 2, 0::2] = G[..., 1]
    B[:, 2, 1::2] = G[..., 0]
    C_lam = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    C_mu = np.diag([2.0, 2.0, 1.0])
    w = QUAD_WEIGHTS * hx * hy
    K_lam = np.einsum("q,qia,ij,qjb->ab", w, B, C_lam, B)
    K_mu = np.einsum("q,qia,ij,qjb->ab", w, B, C_mu, B)
    return K_lam, K_mu


def _sym(M):
    return (M + np.swapaxes(M, -1, -2)) / 2


class IPDGOperators:
    """Local element and edge blocks of one (mesh, medium) pair.

    Building this once and restricting it to many regions is how the basis
    construction avoids re-integrating the same cells over and over.
    """

    def __init__(self, mesh: Mesh, voigt: VoigtTensor):
        if voigt.c11.shape != mesh.fine_shape:
            raise ValueError(f"medium raster {voigt.c11.shape} does not match mesh fine grid {mesh.fine_shape}")
        self.mesh = mesh
        self.voigt = voigt
        self._C = voigt.matrices()
        self._k2 = voigt.d[..., 0].ravel()
        K_lam, K_mu = _reference_stiffness(mesh.hx, mesh.hy)
        lam, mu = voigt.lam.ravel(), voigt.mu.ravel()
        self.cell_K = _sym(lam[:, None, None] * K_lam + mu[:, None, None] * K_mu)
        self._build_edges()

    # -- edges --------------------------------------------------------------

    def _side_arrays(self, element: int, normal):
        mesh = self.mesh
        cells, (fixed_axis, fixed_val) = mesh.side_cells(element, normal)
        nf = mesh.nf
        gp = np.broadcast_to(GAUSS_POINTS, (nf, 2))
        fv = np.full((nf, 2), fixed_val)
        xi, eta = (fv, gp) if fixed_axis == 0 else (gp, fv)
        N, dN = q1_shape(xi, eta)
        G = dN / np.array([mesh.hx, mesh.hy])
        return cells, N, G

    def _build_edges(self):
        mesh = self.mesh
        nf = mesh.nf
        cd = mesh.cell_dofs
        int_parts, bnd_parts = [], []
        self.int_pos = np.full(len(mesh.coarse_edges), -1, dtype=np.int64)
        self.bnd_pos = np.full((len(mesh.coarse_edges), 2), -1, dtype=np.int64)
        for e in mesh.coarse_edges:
            seg = mesh.hy if e.axis == 0 else mesh.hx
            w = np.broadcast_to(GAUSS_WEIGHTS * seg, (nf, 2))
            cp, Np, Gp = self._side_arrays(e.plus, e.normal)
            sides = [(cp, Np, Gp, e.normal)]
            if e.interior:
                cm, Nm, Gm = self._side_arrays(e.minus, e.minus_normal)
                sides.append((cm, Nm, Gm, e.minus_normal))
                self.int_pos[e.index] = len(int_parts)
                int_parts.append(
                    (
                        np.stack([Np, Nm], axis=2),
                        np.stack([Gp, Gm], axis=2),
                        np.stack([self._C[cp], self._C[cm]], axis=1),
                        np.stack([self._k2[cp], self._k2[cm]], axis=1),
                        np.broadcast_to(e.normal, (nf, 2)),
                        w,
                        np.concatenate([cd[cp], cd[cm]], axis=1),
                    )
                )
            for s, (c, N, G, n) in enumerate(sides):
                self.bnd_pos[e.index, s] = len(bnd_parts)
                bnd_parts.append(
                    (
                        N[:, :, None, :],
                        G[:, :, None, :, :],
                        self._C[c][:, None],
                        self._k2[c][:, None],
                        np.broadcast_to(n, (nf, 2)),
                        w,
                        cd[c],
                    )
                )
        self.int_Q, self.int_P, self.int_dofs = self._batch(int_parts, 16)
        self.bnd_Q, self.bnd_P, self.bnd_dofs = self._batch(bnd_parts, 8)

    def _batch(self, parts, nd):
        nf = self.mesh.nf
        if not parts:
            empty = np.zeros((0, nf, nd, nd))
            return empty, empty.copy(), np.zeros((0, nf, nd), dtype=np.int64)
        cat = [np.concatenate([np.asarray(p[k], dtype=float) for p in parts]) for k in range(6)]
        Q, P = kernels.edge_operators(*(np.ascontiguousarray(a) for a in cat))
        dofs = np.concatenate([p[6] for p in parts])
        shape = (len(parts), nf, nd, nd)
        return Q.reshape(shape), _sym(P).reshape(shape), dofs.reshape(len(parts), nf, nd)

    # -- region bookkeeping -------------------------------------------------

    @cached_property
    def full_region(self) -> OversampleRegion:
        return whole_domain(self.mesh)

    def _region(self, region):
        return self.full_region if region is None else region

    def _edge_blocks(self, region: OversampleRegion, which: str):
        """Stacked (local, dofs) edge blocks of ``region``; ``which`` is 'Q' or 'P'."""
        ip = self.int_pos[region.interior_edges]
        bp = np.concatenate(
            [
                self.bnd_pos[region.domain_edges, 0],
                self.bnd_pos[region.boundary_edges, region.boundary_sides],
            ]
        ).astype(np.int64)
        iq = getattr(self, f"int_{which}")[ip]
        bq = getattr(self, f"bnd_{which}")[bp]
        return (
            (iq.reshape(-1, 16, 16), self.int_dofs[ip].reshape(-1, 16)),
            (bq.reshape(-1, 8, 8), self.bnd_dofs[bp].reshape(-1, 8)),
        )

    def _assemble(self, blocks, region: OversampleRegion) -> sp.csr_matrix:
        n = region.ndof
        g2l = region.global_to_local(self.mesh.ndof)
        rows, cols, vals = [], [], []
        for local, dofs in blocks:
            if len(dofs) == 0:
                continue
            r, c, v = kernels.scatter(local, dofs, g2l)
            rows.append(r)
            cols.append(c)
            vals.append(v)
        if not rows:
            return sp.csr_matrix((n, n))
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        return A.tocsr()

    # -- operators ----------------------------------------------------------

    def volume(self, region=None) -> sp.csr_matrix:
        region = self._region(region)
        cells = self.mesh.element_cells[region.elements].ravel()
        K = self._assemble([(self.cell_K[cells], self.mesh.cell_dofs[cells])], region)
        return ((K + K.T) / 2).tocsr()

    def penalty(self, region=None) -> sp.csr_matrix:
        """Edge penalty without the gamma / h factor."""
        region = self._region(region)
        P = self._assemble(self._edge_blocks(region, "P"), region)
        return ((P + P.T) / 2).tocsr()

    def consistency(self, region=None) -> sp.csr_matrix:
        """Q with v^T Q u = sum_E int_E {sigma(u)} : [[v]]."""
        region = self._region(region)
        return self._assemble(self._edge_blocks(region, "Q"), region)

    def edge_terms(self, config: AssemblyConfig, region=None) -> sp.csr_matrix:
        Q = self.consistency(region)
        P = self.penalty(region)
        return ((config.gamma / self.mesh.h) * P - (Q + config.eta * Q.T)).tocsr()

    def adg(self, config: AssemblyConfig, region=None) -> sp.csr_matrix:
        return (self.volume(region) + self.edge_terms(config, region)).tocsr()

    def norm_matrix(self, config: AssemblyConfig, region=None) -> sp.csr_matrix:
        """Gram matrix of the DG norm."""
        return (self.volume(region) + (config.gamma / self.mesh.h) * self.penalty(region)).tocsr()

    def cell_mass(self, cell_weights: np.ndarray, region=None) -> sp.csr_matrix:
        """Vector mass with weights given at the 2x2 Gauss points, shape (n_cells, 4)."""
        region = self._region(region)
        return weighted_mass_matrix(self.mesh, cell_weights, region)


def weighted_mass_matrix(mesh: Mesh, cell_weights: np.ndarray, region=None) -> sp.csr_matrix:
    region = whole_domain(mesh) if region is None else region
    cell_weights = np.asarray(cell_weights, dtype=float)
    if cell_weights.shape != (mesh.n_cells, 4):
        raise ValueError(f"weights must have shape {(mesh.n_cells, 4)}, got {cell_weights.shape}")
    cells = mesh.element_cells[region.elements].ravel()
    Nq, _ = q1_shape(QUAD_POINTS[:, 0], QUAD_POINTS[:, 1])
    w = cell_weights[cells] * (QUAD_WEIGHTS * mesh.hx * mesh.hy)
    local = kernels.weighted_mass(w, Nq)
    g2l = region.global_to_local(mesh.ndof)
    r, c, v = kernels.scatter(local, mesh.cell_dofs[cells], g2l)
    M = sp.coo_matrix((v, (r, c)), shape=(region.ndof, region.ndof)).tocsr()
    return ((M + M.T) / 2).tocsr()


# ---------------------------------------------------------------------------
# functional entry points
# ---------------------------------------------------------------------------


def assemble_volume(mesh: Mesh, voigt: VoigtTensor, region=None) -> sp.csr_matrix:
    return IPDGOperators(mesh, voigt).volume(region)


def assemble_edge_terms(mesh: Mesh, voigt: VoigtTensor, config: AssemblyConfig, region=None) -> sp.csr_matrix:
    return IPDGOperators(mesh, voigt).edge_terms(config, region)


def assemble_adg(mesh: Mesh, voigt: VoigtTensor, config: AssemblyConfig, region=None) -> sp.csr_matrix:
    return IPDGOperators(mesh, voigt).adg(config, region)


def assemble_b(mesh: Mesh, weights: WeightField, region=None) -> sp.csr_matrix:
    """Block-diagonal k1-weighted vector mass, b(w, v) = int k1 w . v."""
    return weighted_mass_matrix(mesh, weights.k1, region)


def assemble_source(mesh: Mesh, f, region=None) -> np.ndarray:
    """Load vector of a constant force density with 2x2 Gauss quadrature."""
    f = np.asarray(f, dtype=float)
    if f.shape != (2,) or not np.all(np.isfinite(f)):
        raise ValueError(f"force must be a finite 2-vector, got {f!r}")
    region = whole_domain(mesh) if region is None else region
    cells = mesh.element_cells[region.elements].ravel()
    Nq, _ = q1_shape(QUAD_POINTS[:, 0], QUAD_POINTS[:, 1])
    node_int = (QUAD_WEIGHTS @ Nq) * mesh.hx * mesh.hy  # int of each shape function
    local = (node_int[:, None] * f[None, :]).ravel()
    g2l = region.global_to_local(mesh.ndof)
    F = np.zeros(region.ndof)
    np.add.at(F, g2l[mesh.cell_dofs[cells]].ravel(), np.tile(local, len(cells)))
    return F


def coercivity_probe(E, nu: float, config: AssemblyConfig, warn: bool = True) -> float:
    """Smallest generalised eigenvalue of (A, DG-norm Gram) on a 2x2/4x4 surrogate.

    The surrogate samples the medium's extreme values in a checkerboard so the
    largest jumps in coefficients sit across coarse edges. Values below 1/2
    mean the coercivity bound fails; doubling gamma is the usual fix.
    """
    E = np.asarray(E, dtype=float)
    mesh = build_mesh(2, 2, 4)
    lo, hi = float(E.min()), float(E.max())
    ny, nx = mesh.fine_shape
    yy, xx = np.mgrid[0:ny, 0:nx]
    raster = np.where((xx // 2 + yy // 2) % 2 == 0, hi, lo)
    ops = IPDGOperators(mesh, voigt_tensor(material_from_modulus(raster, nu)))
    A = ops.adg(config).toarray()
    N = ops.norm_matrix(config).toarray()
    lam_min = float(scipy.linalg.eigh((A + A.T) / 2, N, eigvals_only=True, subset_by_index=[0, 0])[0])
    if warn and lam_min < 0.5:
        msg = (
            f"coercivity probe failed for gamma={config.gamma}: min a(v,v)/|v|^2_DG = {lam_min:.3g} < 0.5; "
            f"try gamma={2 * config.gamma:g}"
        )
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return lam_min


def write_triplets(M, path) -> None:
    """Dump a sparse matrix as sorted 0-based 'row col value' lines."""
    C = sp.coo_matrix(M)
    order = np.lexsort((C.col, C.row))
    with open(path, "w", encoding="utf-8") as fh:
        for r, c, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


def read_triplets(path, shape=None) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    r, c, v = data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2]
    if shape is None:
        shape = (int(r.max()) + 1, int(c.max()) + 1)
    return sp.coo_matrix((v, (r, c)), shape=shape).tocsr()
