"""Auxiliary spectral space and constraint-energy-minimising basis functions.

Per coarse element ``K_j`` the auxiliary space keeps the ``G`` smallest
eigenpairs of ``A_j psi = lam B_j psi`` (cellwise stiffness against the
k1-weighted mass, no boundary conditions). Basis functions are then
energy minimisers on oversampling regions, either with the auxiliary
moments imposed exactly (``constrained``) or penalised (``relaxed``).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssemblyConfig, IPDGOperators, weighted_mass_matrix
from .grid import OversampleRegion, oversample, whole_domain
from .media import WeightField

log = logging.getLogger(__name__)

MODES = ("constrained", "relaxed")
RESIDUAL_TOL = 1e-10


class SingularSystemError(RuntimeError):
    pass


@dataclass(frozen=True)
class AuxiliarySpace:
    """Retained eigenpairs of every coarse block.

    ``eigenvectors[j]`` has shape ``(dofs_per_block, G)`` in block-local DOF
    order and is b-orthonormal; ``mass[j]`` is the dense block b-mass.
    """

    eigenvalues: np.ndarray  # (N, G)
    eigenvectors: np.ndarray  # (N, dofs_per_block, G)
    mass: np.ndarray  # (N, dofs_per_block, dofs_per_block)

    @property
    def G(self) -> int:
        return self.eigenvalues.shape[1]

    @property
    def n_elements(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def moments(self) -> np.ndarray:
        """(N, G, dofs_per_block) rows of Psi_j^T B_j; moment = row . v_j."""
        return np.einsum("jdg,jde->jge", self.eigenvectors, self.mass)

    def constraint_matrix(self, region: OversampleRegion) -> sp.csr_matrix:
        """Moments of every auxiliary function of ``region`` against region DOFs."""
        mom = self.moments
        return sp.block_diag([mom[m] for m in region.elements], format="csr")

    def embed(self, j: int, i: int, ndof: int) -> np.ndarray:
        """psi_i^j as a global fine vector."""
        dpb = self.eigenvectors.shape[1]
        v = np.zeros(ndof)
        v[j * dpb : (j + 1) * dpb] = self.eigenvectors[j, :, i]
        return v


def local_spectral(ops: IPDGOperators, weights: WeightField, j: int, G: int):
    """``G`` smallest generalised eigenpairs on coarse block ``j``.

    Returns ``(eigenvalues, eigenvectors, B_j)`` with b-orthonormal
    eigenvectors whose largest-magnitude entry is positive.
    """
    mesh = ops.mesh
    region = oversample(mesh, j, 0)
    if not 1 <= G <= region.ndof:
        raise ValueError(f"number of auxiliary functions must be in [1, {region.ndof}], got {G}")
    A = ops.volume(region).toarray()
    B = weighted_mass_matrix(mesh, weights.k1, region).toarray()
    try:
        lam, psi = scipy.linalg.eigh(A, B, subset_by_index=[0, G - 1])
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"block {j}: weighted mass is not positive definite ({exc}); check k1") from exc
    # b-orthonormalise again; eigh's normalisation is good to ~1e-13 already
    gram = psi.T @ B @ psi
    L = np.linalg.cholesky((gram + gram.T) / 2)
    psi = np.linalg.solve(L, psi.T).T
    idx = np.argmax(np.abs(psi), axis=0)
    psi *= np.sign(psi[idx, np.arange(G)])
    return lam, psi, B


def build_auxiliary_space(ops: IPDGOperators, weights: WeightField, G: int) -> AuxiliarySpace:
    vals, vecs, mass = [], [], []
    for j in range(ops.mesh.n_elements):
        lam, psi, B = local_spectral(ops, weights, j, G)
        vals.append(lam)
        vecs.append(psi)
        mass.append(B)
    return AuxiliarySpace(eigenvalues=np.array(vals), eigenvectors=np.array(vecs), mass=np.array(mass))


class ProjectionOperator:
    """b-orthogonal projection onto the auxiliary space."""

    def __init__(self, aux: AuxiliarySpace):
        self.aux = aux
        self._mom = aux.moments

    def coefficients(self, v: np.ndarray) -> np.ndarray:
        """(N, G) coefficients b_j(v, psi_i^j) of a global fine vector."""
        N, G, dpb = self._mom.shape
        return np.einsum("jge,je->jg", self._mom, np.asarray(v).reshape(N, dpb))

    def expand(self, coeffs: np.ndarray) -> np.ndarray:
        return np.einsum("jdg,jg->jd", self.aux.eigenvectors, coeffs).ravel()

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.expand(self.coefficients(v))


def project(pi: ProjectionOperator, v: np.ndarray) -> np.ndarray:
    return pi.coefficients(v)


@dataclass
class MultiscaleBasis:
    """Basis columns on the global fine DOF layout, column ``j * G + i``."""

    R: sp.csc_matrix
    mode: str
    p: int
    G: int
    regions: list = field(repr=False, default_factory=list)
    multipliers: np.ndarray | None = field(repr=False, default=None)
    residuals: np.ndarray | None = field(repr=False, default=None)

    @property
    def n_columns(self) -> int:
        return self.R.shape[1]

    def column(self, j: int, i: int) -> np.ndarray:
        return self.R[:, j * self.G + i].toarray().ravel()


def _relative_residual(K, x, rhs):
    nb = np.linalg.norm(rhs, axis=0)
    nb[nb == 0] = 1.0
    return np.linalg.norm(K @ x - rhs, axis=0) / nb


def _solve_refined(lu, K, rhs, steps=3):
    x = lu.solve(rhs)
    res = _relative_residual(K, x, rhs)
    for _ in range(steps):
        if np.all(res <= RESIDUAL_TOL):
            break
        x = x + lu.solve(rhs - K @ x)
        res = _relative_residual(K, x, rhs)
    return x, res


class BasisBuilder:
    """Solves the local (or global) basis problems for one medium and config."""

    def __init__(self, ops: IPDGOperators, aux: AuxiliarySpace, config: AssemblyConfig):
        self.ops = ops
        self.aux = aux
        self.config = config
        self.mesh = ops.mesh

    def region(self, j: int, p: int | None) -> OversampleRegion:
        return whole_domain(self.mesh) if p is None else oversample(self.mesh, j, p)

    def _targets(self, region: OversampleRegion, j: int, which) -> np.ndarray:
        pos = int(np.searchsorted(region.elements, j))
        if pos >= len(region.elements) or region.elements[pos] != j:
            raise ValueError(f"element {j} is not inside the region")
        G = self.aux.G
        E = np.zeros((len(region.elements) * G, len(which)))
        for k, i in enumerate(which):
            E[pos * G + i, k] = 1.0
        return E

    def constrained(self, j: int, p: int | None, which=None):
        """Columns for auxiliary indices ``which`` of element ``j``.

        Solves ``[A C^T; C 0] [phi; delta] = [0; e_(j,i)]`` on the region
        (``p=None`` means the whole domain). Returns ``(region, phi, delta,
        residual)`` with ``phi`` of shape (region ndof, len(which)).
        """
        which = list(range(self.aux.G)) if which is None else list(which)
        region = self.region(j, p)
        A = self.ops.adg(self.config, region)
        C = self.aux.constraint_matrix(region)
        # balance the two blocks so the pivoting sees comparable magnitudes
        s = np.sqrt(abs(A.diagonal()).max() / max(abs((C.T @ C).diagonal()).max(), 1e-300))
        K = sp.bmat([[A, s * C.T], [s * C, None]], format="csc")
        n = region.ndof
        rhs = np.zeros((K.shape[0], len(which)))
        rhs[n:] = s * self._targets(region, j, which)
        try:
            lu = spla.splu(K, permc_spec="MMD_ATA")
        except RuntimeError as exc:
            raise SingularSystemError(f"constrained saddle system singular for block {j}, p={p}: {exc}") from exc
        x, res = _solve_refined(lu, K, rhs)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError(f"constrained saddle system singular for block {j}, p={p}")
        return region, x[:n], s * x[n:], res

    def relaxed(self, j: int, p: int | None, which=None):
        """Columns of the penalised problem ``(A + C^T C) phi = C^T e_(j,i)``."""
        which = list(range(self.aux.G)) if which is None else list(which)
        region = self.region(j, p)
        A = self.ops.adg(self.config, region)
        C = self.aux.constraint_matrix(region)
        K = (A + C.T @ C).tocsc()
        rhs = C.T @ self._targets(region, j, which)
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        x, res = _solve_refined(lu, K, rhs)
        return region, x, None, res

    def solve(self, mode: str, j: int, p: int | None, which=None):
        if mode == "constrained":
            return self.constrained(j, p, which)
        if mode == "relaxed":
            return self.relaxed(j, p, which)
        raise ValueError(f"unknown basis mode {mode!r}; expected one of {MODES}")

    def global_column(self, mode: str, j: int, i: int, p: int | None) -> np.ndarray:
        """Column for (j, i) scattered to the global DOF layout."""
        region, phi, _, _ = self.solve(mode, j, p, [i])
        out = np.zeros(self.mesh.ndof)
        out[region.local_dof_map] = phi[:, 0]
        return out

    def build(self, mode: str, p: int, workers: int = 1) -> MultiscaleBasis:
        if mode not in MODES:
            raise ValueError(f"unknown basis mode {mode!r}; expected one of {MODES}")
        G = self.aux.G
        N = self.mesh.n_elements

        def task(j):
            return self.solve(mode, j, p)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(task, range(N)))
        else:
            results = [task(j) for j in range(N)]
        rows, cols, vals, regions, res = [], [], [], [], []
        mult = [] if mode == "constrained" else None
        for j, (region, phi, delta, r) in enumerate(results):
            nz = np.nonzero(phi)
            rows.append(region.local_dof_map[nz[0]])
            cols.append(j * G + nz[1])
            vals.append(phi[nz])
            regions.append(region)
            res.append(r)
            if mult is not None:
                mult.append(delta)
        R = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.mesh.ndof, N * G)
        )
        return MultiscaleBasis(
            R=R, mode=mode, p=p, G=G, regions=regions, multipliers=mult, residuals=np.concatenate(res)
        )


def build_constrained_basis(builder: BasisBuilder, j: int, i: int, p: int):
    """Local constrained column (global layout) and its multipliers."""
    region, phi, delta, _ = builder.constrained(j, p, [i])
    out = np.zeros(builder.mesh.ndof)
    out[region.local_dof_map] = phi[:, 0]
    return out, delta[:, 0]


def build_constrained_global(builder: BasisBuilder, j: int, i: int) -> np.ndarray:
    return builder.global_column("constrained", j, i, None)


def build_relaxed_basis(builder: BasisBuilder, j: int, i: int, p: int) -> np.ndarray:
    return builder.global_column("relaxed", j, i, p)


def build_relaxed_global(builder: BasisBuilder, j: int, i: int) -> np.ndarray:
    return builder.global_column("relaxed", j, i, None)


@dataclass(frozen=True)
class DecayProfile:
    layers: np.ndarray
    gaps: np.ndarray
    slope: float


def decay_profile(builder: BasisBuilder, mode: str, j: int, i: int, pmax: int, norm_matrix=None) -> DecayProfile:
    """DG-norm gaps between the global column and its localisations p = 0..pmax.

    The slope is the least-squares fit of log gap against p over p >= 1,
    skipping gaps at round-off level.
    """
    if norm_matrix is None:
        norm_matrix = builder.ops.norm_matrix(builder.config)
    glo = builder.global_column(mode, j, i, None)
    ps = np.arange(pmax + 1)
    gaps = []
    for p in ps:
        d = glo - builder.global_column(mode, j, i, int(p))
        gaps.append(np.sqrt(max(d @ (norm_matrix @ d), 0.0)))
    gaps = np.array(gaps)
    scale = np.sqrt(glo @ (norm_matrix @ glo))
    sel = (ps >= 1) & (gaps > 1e-12 * scale)
    slope = float(np.polyfit(ps[sel], np.log(gaps[sel]), 1)[0]) if sel.sum() >= 2 else float("nan")
    return DecayProfile(layers=ps, gaps=gaps, slope=slope)
