"""Nested rectangular coarse/fine grids with a block-wise DG layout.

Every coarse element owns its own copy of the fine nodes lying on its
boundary, so functions are continuous inside a block and may jump across
coarse edges.

DOF ordering is block-major, then node-lexicographic inside the block
(x fastest), then component (x before y)::

    dof = 2 * (j * (nf + 1)**2 + iy * (nf + 1) + ix) + c

Fine cells are numbered in raster order over the whole domain
(y outer, x inner), which is also the layout of medium files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# 2-point Gauss rule on [0, 1]
GAUSS_POINTS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
GAUSS_WEIGHTS = np.array([0.5, 0.5])

# local Q1 node offsets (ax, ay); node a of a cell
NODE_OFFSETS = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])

# 2x2 tensor Gauss points on the reference square, q = 2 * b + a
QUAD_POINTS = np.array([[GAUSS_POINTS[a], GAUSS_POINTS[b]] for b in range(2) for a in range(2)])
QUAD_WEIGHTS = np.array([GAUSS_WEIGHTS[a] * GAUSS_WEIGHTS[b] for b in range(2) for a in range(2)])


def q1_shape(xi, eta):
    """Bilinear shape functions and reference gradients on [0, 1]^2.

    Returns ``N`` with shape ``(..., 4)`` and ``dN`` with shape
    ``(..., 4, 2)`` holding (d/dxi, d/deta).
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    N = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta], axis=-1)
    dxi = np.stack([-(1 - eta), (1 - eta), -eta, eta], axis=-1)
    deta = np.stack([-(1 - xi), -xi, (1 - xi), xi], axis=-1)
    return N, np.stack([dxi, deta], axis=-1)


@dataclass(frozen=True)
class CoarseEdge:
    """A coarse grid edge.

    ``axis`` is the direction of the normal: 0 for vertical edges (separating
    x-neighbours), 1 for horizontal ones. ``normal`` is the outward unit normal
    of the ``plus`` element; ``minus`` is -1 on the domain boundary.
    """

    index: int
    axis: int
    origin: tuple[float, float]
    length: float
    plus: int
    minus: int
    normal: tuple[float, float]

    @property
    def interior(self) -> bool:
        return self.minus >= 0

    @property
    def minus_normal(self) -> tuple[float, float]:
        return (-self.normal[0], -self.normal[1])


@dataclass(frozen=True)
class Mesh:
    nc_x: int
    nc_y: int
    nf: int
    extent: tuple[float, float] = (1.0, 1.0)
    coarse_edges: tuple[CoarseEdge, ...] = field(default=(), repr=False)

    @property
    def Hx(self) -> float:
        return self.extent[0] / self.nc_x

    @property
    def Hy(self) -> float:
        return self.extent[1] / self.nc_y

    @property
    def H(self) -> float:
        return self.Hx

    @property
    def hx(self) -> float:
        return self.Hx / self.nf

    @property
    def hy(self) -> float:
        return self.Hy / self.nf

    @property
    def h(self) -> float:
        return self.hx

    @property
    def n_elements(self) -> int:
        return self.nc_x * self.nc_y

    @property
    def nodes_per_block(self) -> int:
        return (self.nf + 1) ** 2

    @property
    def dofs_per_block(self) -> int:
        return 2 * self.nodes_per_block

    @property
    def ndof(self) -> int:
        return self.n_elements * self.dofs_per_block

    @property
    def fine_shape(self) -> tuple[int, int]:
        """(ny, nx) fine cell counts; the raster shape of a medium."""
        return (self.nc_y * self.nf, self.nc_x * self.nf)

    @property
    def n_cells(self) -> int:
        ny, nx = self.fine_shape
        return nx * ny

    @property
    def n_coarse_nodes(self) -> int:
        return (self.nc_x + 1) * (self.nc_y + 1)

    def element_ij(self, j: int) -> tuple[int, int]:
        return j % self.nc_x, j // self.nc_x

    def element_index(self, jx: int, jy: int) -> int:
        return jy * self.nc_x + jx

    def block_dofs(self, j: int) -> np.ndarray:
        start = j * self.dofs_per_block
        return np.arange(start, start + self.dofs_per_block)

    @cached_property
    def dof_map(self) -> np.ndarray:
        """(N, nodes_per_block, 2) global DOF of (block, local node, component)."""
        return np.arange(self.ndof).reshape(self.n_elements, self.nodes_per_block, 2)

    @cached_property
    def element_cells(self) -> np.ndarray:
        """(N, nf**2) raster fine-cell ids of each coarse element."""
        nf = self.nf
        nx = self.fine_shape[1]
        iy, ix = np.divmod(np.arange(nf * nf), nf)
        out = np.empty((self.n_elements, nf * nf), dtype=np.int64)
        for j in range(self.n_elements):
            jx, jy = self.element_ij(j)
            out[j] = (jy * nf + iy) * nx + jx * nf + ix
        return out

    @cached_property
    def cell_element(self) -> np.ndarray:
        ny, nx = self.fine_shape
        gy, gx = np.divmod(np.arange(nx * ny), nx)
        return (gy // self.nf) * self.nc_x + gx // self.nf

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(n_cells, 8) DOFs of each fine cell, node-major then component."""
        nf = self.nf
        ny, nx = self.fine_shape
        gy, gx = np.divmod(np.arange(nx * ny), nx)
        j = (gy // nf) * self.nc_x + gx // nf
        ix, iy = gx % nf, gy % nf
        nodes = (iy[:, None] + NODE_OFFSETS[None, :, 1]) * (nf + 1) + ix[:, None] + NODE_OFFSETS[None, :, 0]
        base = 2 * (j[:, None] * self.nodes_per_block + nodes)
        return np.stack([base, base + 1], axis=-1).reshape(-1, 8)

    @cached_property
    def cell_origin(self) -> np.ndarray:
        ny, nx = self.fine_shape
        gy, gx = np.divmod(np.arange(nx * ny), nx)
        return np.stack([gx * self.hx, gy * self.hy], axis=-1)

    @cached_property
    def dof_coords(self) -> np.ndarray:
        """(ndof, 2) physical location of the node each DOF sits on."""
        nf = self.nf
        iy, ix = np.divmod(np.arange(self.nodes_per_block), nf + 1)
        coords = np.empty((self.n_elements, self.nodes_per_block, 2))
        for j in range(self.n_elements):
            jx, jy = self.element_ij(j)
            coords[j, :, 0] = jx * self.Hx + ix * self.hx
            coords[j, :, 1] = jy * self.Hy + iy * self.hy
        return np.repeat(coords.reshape(-1, 2), 2, axis=0)

    def side_cells(self, element: int, normal: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
        """Fine cells of ``element`` touching its side with outward ``normal``.

        Returns the raster cell ids ordered along the side and the reference
        coordinate that is fixed on that side, as ``(cells, (axis, value))``
        packed in an array ``[axis, value]``.
        """
        nf = self.nf
        cells = self.element_cells[element].reshape(nf, nf)  # [iy, ix]
        nx_, ny_ = normal
        if nx_ > 0:
            return cells[:, nf - 1], np.array([0.0, 1.0])
        if nx_ < 0:
            return cells[:, 0], np.array([0.0, 0.0])
        if ny_ > 0:
            return cells[nf - 1, :], np.array([1.0, 1.0])
        return cells[0, :], np.array([1.0, 0.0])


def build_mesh(nc_x: int, nc_y: int, nf: int, extent=(1.0, 1.0)) -> Mesh:
    """Build the nested coarse/fine rectangular mesh and its coarse edge list."""
    for name, val in (("nc_x", nc_x), ("nc_y", nc_y), ("nf", nf)):
        if int(val) != val or val < 1:
            raise ValueError(f"{name} must be a positive integer, got {val!r}")
    Lx, Ly = (float(v) for v in extent)
    if not (np.isfinite(Lx) and np.isfinite(Ly)) or Lx <= 0 or Ly <= 0:
        raise ValueError(f"degenerate extent {extent!r}")
    nc_x, nc_y, nf = int(nc_x), int(nc_y), int(nf)
    Hx, Hy = Lx / nc_x, Ly / nc_y

    def eid(jx, jy):
        return jy * nc_x + jx

    raw = []
    # vertical edges at x = ix * Hx
    for ix in range(nc_x + 1):
        for jy in range(nc_y):
            origin = (ix * Hx, jy * Hy)
            if ix == 0:
                raw.append((0, origin, Hy, eid(0, jy), -1, (-1.0, 0.0)))
            elif ix == nc_x:
                raw.append((0, origin, Hy, eid(nc_x - 1, jy), -1, (1.0, 0.0)))
            else:
                raw.append((0, origin, Hy, eid(ix - 1, jy), eid(ix, jy), (1.0, 0.0)))
    # horizontal edges at y = iy * Hy
    for iy in range(nc_y + 1):
        for jx in range(nc_x):
            origin = (jx * Hx, iy * Hy)
            if iy == 0:
                raw.append((1, origin, Hx, eid(jx, 0), -1, (0.0, -1.0)))
            elif iy == nc_y:
                raw.append((1, origin, Hx, eid(jx, nc_y - 1), -1, (0.0, 1.0)))
            else:
                raw.append((1, origin, Hx, eid(jx, iy - 1), eid(jx, iy), (0.0, 1.0)))
    raw.sort(key=lambda r: (r[1][0], r[1][1], r[0]))
    edges = tuple(
        CoarseEdge(index=k, axis=a, origin=o, length=ln, plus=p, minus=m, normal=n)
        for k, (a, o, ln, p, m, n) in enumerate(raw)
    )
    return Mesh(nc_x=nc_x, nc_y=nc_y, nf=nf, extent=(Lx, Ly), coarse_edges=edges)


@dataclass(frozen=True)
class OversampleRegion:
    """Coarse element ``center`` enlarged by ``p`` layers of coarse elements.

    ``boundary_edges`` are the edges of the region boundary that lie inside
    the domain, with ``boundary_sides`` telling which side (0 = plus,
    1 = minus) of each edge belongs to the region. ``domain_edges`` are the
    domain-boundary edges of region elements.
    """

    center: int
    p: int
    elements: np.ndarray
    interior_edges: np.ndarray
    boundary_edges: np.ndarray
    boundary_sides: np.ndarray
    domain_edges: np.ndarray
    local_dof_map: np.ndarray

    @property
    def ndof(self) -> int:
        return len(self.local_dof_map)

    def global_to_local(self, ndof: int) -> np.ndarray:
        g2l = np.full(ndof, -1, dtype=np.int64)
        g2l[self.local_dof_map] = np.arange(len(self.local_dof_map))
        return g2l


def _region(mesh: Mesh, center: int, p: int, elements: np.ndarray) -> OversampleRegion:
    inside = np.zeros(mesh.n_elements, dtype=bool)
    inside[elements] = True
    interior, bnd, sides, dom = [], [], [], []
    for e in mesh.coarse_edges:
        pin = inside[e.plus]
        if not e.interior:
            if pin:
                dom.append(e.index)
            continue
        min_ = inside[e.minus]
        if pin and min_:
            interior.append(e.index)
        elif pin or min_:
            bnd.append(e.index)
            sides.append(0 if pin else 1)
    dofs = np.concatenate([mesh.block_dofs(j) for j in elements])
    as_int = lambda v: np.asarray(v, dtype=np.int64)  # noqa: E731
    return OversampleRegion(
        center=center,
        p=p,
        elements=as_int(elements),
        interior_edges=as_int(interior),
        boundary_edges=as_int(bnd),
        boundary_sides=as_int(sides),
        domain_edges=as_int(dom),
        local_dof_map=dofs,
    )


def oversample(mesh: Mesh, j: int, p: int) -> OversampleRegion:
    """The l-infinity ball of ``p`` coarse layers around element ``j``."""
    if not 0 <= j < mesh.n_elements or int(j) != j:
        raise ValueError(f"invalid coarse element index {j!r}")
    if p < 0 or int(p) != p:
        raise ValueError(f"oversampling layers must be a non-negative integer, got {p!r}")
    cx, cy = mesh.element_ij(j)
    jx, jy = np.meshgrid(
        np.arange(max(cx - p, 0), min(cx + p, mesh.nc_x - 1) + 1),
        np.arange(max(cy - p, 0), min(cy + p, mesh.nc_y - 1) + 1),
    )
    elements = np.sort((jy * mesh.nc_x + jx).ravel())
    return _region(mesh, int(j), int(p), elements)


def whole_domain(mesh: Mesh) -> OversampleRegion:
    return _region(mesh, -1, max(mesh.nc_x, mesh.nc_y), np.arange(mesh.n_elements))


def coarse_neighborhood(mesh: Mesh, i: int) -> np.ndarray:
    """Coarse elements sharing coarse node ``i``."""
    ix, iy = i % (mesh.nc_x + 1), i // (mesh.nc_x + 1)
    out = []
    for jy in (iy - 1, iy):
        for jx in (ix - 1, ix):
            if 0 <= jx < mesh.nc_x and 0 <= jy < mesh.nc_y:
                out.append(mesh.element_index(jx, jy))
    return np.array(sorted(out), dtype=np.int64)


@dataclass(frozen=True)
class PartitionOfUnity:
    """Bilinear coarse hats sampled at the 2x2 Gauss points of every fine cell.

    Only the four hats of the host coarse element are nonzero inside a fine
    cell, so values are stored compactly: ``values[c, q, a]`` is the hat of
    coarse node ``node_ids[c, a]`` at quadrature point ``q`` of cell ``c``.
    """

    node_ids: np.ndarray  # (n_cells, 4)
    points: np.ndarray  # (n_cells, 4, 2)
    values: np.ndarray  # (n_cells, 4, 4)
    gradients: np.ndarray  # (n_cells, 4, 4, 2)

    def grad_sq_sum(self) -> np.ndarray:
        """(n_cells, 4) sum over hats of |grad chi|^2 at each Gauss point."""
        return np.sum(self.gradients**2, axis=(-1, -2))


def hat_gradients(xi, eta, Hx: float, Hy: float):
    """Values and physical gradients of the 4 hats of one coarse element."""
    N, dN = q1_shape(xi, eta)
    grad = dN / np.array([Hx, Hy])
    return N, grad


def partition_of_unity(mesh: Mesh) -> PartitionOfUnity:
    ny, nx = mesh.fine_shape
    gy, gx = np.divmod(np.arange(nx * ny), nx)
    jx, jy = gx // mesh.nf, gy // mesh.nf
    pts = mesh.cell_origin[:, None, :] + QUAD_POINTS[None, :, :] * np.array([mesh.hx, mesh.hy])
    xi = (pts[..., 0] - (jx * mesh.Hx)[:, None]) / mesh.Hx
    eta = (pts[..., 1] - (jy * mesh.Hy)[:, None]) / mesh.Hy
    vals, grads = hat_gradients(xi, eta, mesh.Hx, mesh.Hy)
    ids = (jy[:, None] + NODE_OFFSETS[None, :, 1]) * (mesh.nc_x + 1) + jx[:, None] + NODE_OFFSETS[None, :, 0]
    return PartitionOfUnity(node_ids=ids, points=pts, values=vals, gradients=grads)


def hat_value(mesh: Mesh, i: int, x, y) -> np.ndarray:
    """Evaluate coarse hat ``i`` at arbitrary points."""
    ix, iy = i % (mesh.nc_x + 1), i // (mesh.nc_x + 1)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.clip(1 - np.abs(x / mesh.Hx - ix), 0, None) * np.clip(1 - np.abs(y / mesh.Hy - iy), 0, None)
