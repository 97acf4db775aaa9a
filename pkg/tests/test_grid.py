import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgcem.grid import (
    QUAD_POINTS,
    build_mesh,
    coarse_neighborhood,
    hat_gradients,
    hat_value,
    oversample,
    partition_of_unity,
    q1_shape,
    whole_domain,
)


def test_full_scale_dof_count():
    m = build_mesh(15, 15, 15)
    assert m.n_elements == 225
    assert m.ndof == 2 * 225 * 16**2 == 115_200


def test_smallest_mesh():
    m = build_mesh(1, 1, 1)
    assert m.n_elements == 1
    assert m.ndof == 8
    assert sum(not e.interior for e in m.coarse_edges) == 4
    assert sum(e.interior for e in m.coarse_edges) == 0


def test_two_element_normals():
    m = build_mesh(2, 1, 2, (2.0, 1.0))
    inner = [e for e in m.coarse_edges if e.interior]
    assert len(inner) == 1
    e = inner[0]
    assert e.normal == (1.0, 0.0)
    assert e.minus_normal == (-1.0, 0.0)
    assert m.H == pytest.approx(1.0) and m.h == pytest.approx(0.5)


@pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, 0), (2, 2, 2.5)])
def test_rejects_bad_counts(args):
    with pytest.raises(ValueError):
        build_mesh(*args)


@pytest.mark.parametrize("extent", [(0.0, 1.0), (1.0, -1.0), (float("nan"), 1.0)])
def test_rejects_degenerate_extent(extent):
    with pytest.raises(ValueError):
        build_mesh(2, 2, 2, extent)


def test_every_cell_in_one_element():
    m = build_mesh(3, 2, 4)
    cells = m.element_cells.ravel()
    assert np.array_equal(np.sort(cells), np.arange(m.n_cells))
    for j in range(m.n_elements):
        assert np.all(m.cell_element[m.element_cells[j]] == j)


def test_dof_formula():
    m = build_mesh(3, 2, 4)
    nf = m.nf
    for j, iy, ix, c in [(0, 0, 0, 0), (2, 1, 3, 1), (5, 4, 4, 1)]:
        assert m.dof_map[j, iy * (nf + 1) + ix, c] == 2 * (j * (nf + 1) ** 2 + iy * (nf + 1) + ix) + c


def test_interior_edges_duplicate_dofs():
    m = build_mesh(3, 3, 3)
    coords = m.dof_coords
    for e in m.coarse_edges:
        if not e.interior:
            assert e.normal in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)]
            continue
        assert e.minus_normal == tuple(-v for v in e.normal)
        a, b = set(m.block_dofs(e.plus)), set(m.block_dofs(e.minus))
        assert not a & b
        # both copies of the shared nodes sit at the same coordinates
        ca = {tuple(np.round(x, 12)) for x in coords[m.block_dofs(e.plus)]}
        cb = {tuple(np.round(x, 12)) for x in coords[m.block_dofs(e.minus)]}
        assert len(ca & cb) == m.nf + 1


def test_edges_sorted_and_deterministic():
    a, b = build_mesh(4, 3, 2), build_mesh(4, 3, 2)
    keys = [(e.origin[0], e.origin[1], e.axis) for e in a.coarse_edges]
    assert keys == sorted(keys)
    assert a.coarse_edges == b.coarse_edges
    assert [e.index for e in a.coarse_edges] == list(range(len(a.coarse_edges)))
    assert len(a.coarse_edges) == 4 * 4 + 5 * 3


def test_oversample_examples():
    m = build_mesh(15, 15, 2)
    assert len(oversample(m, m.element_index(7, 7), 1).elements) == 9
    assert len(oversample(m, 0, 1).elements) == 4
    assert len(oversample(m, 37, 15).elements) == m.n_elements
    assert len(oversample(m, 37, 0).elements) == 1


def test_oversample_errors():
    m = build_mesh(3, 3, 2)
    for j in (-1, 9):
        with pytest.raises(ValueError):
            oversample(m, j, 1)
    with pytest.raises(ValueError):
        oversample(m, 0, -1)


@settings(max_examples=40, deadline=None)
@given(nx=st.integers(1, 6), ny=st.integers(1, 6), data=st.data())
def test_oversample_monotone_and_saturating(nx, ny, data):
    m = build_mesh(nx, ny, 1)
    j = data.draw(st.integers(0, m.n_elements - 1))
    prev = set()
    for p in range(max(nx, ny) + 2):
        r = oversample(m, j, p)
        cur = set(r.elements.tolist())
        assert prev <= cur
        jx, jy = m.element_ij(j)
        expect = {
            m.element_index(x, y)
            for x in range(max(0, jx - p), min(nx, jx + p + 1))
            for y in range(max(0, jy - p), min(ny, jy + p + 1))
        }
        assert cur == expect
        # region boundary edges never lie on the domain boundary
        assert all(m.coarse_edges[e].interior for e in r.boundary_edges)
        prev = cur
    full = whole_domain(m)
    assert np.array_equal(oversample(m, j, max(nx, ny)).elements, full.elements)
    assert len(full.boundary_edges) == 0


def test_region_dof_map():
    m = build_mesh(4, 4, 2)
    r = oversample(m, 5, 1)
    assert r.ndof == len(r.elements) * m.dofs_per_block
    g2l = r.global_to_local(m.ndof)
    assert np.array_equal(g2l[r.local_dof_map], np.arange(r.ndof))
    assert np.sum(g2l >= 0) == r.ndof


def test_q1_shape_partition():
    xi, eta = np.random.default_rng(0).random((2, 50))
    N, dN = q1_shape(xi, eta)
    assert np.allclose(N.sum(-1), 1.0, atol=1e-15)
    assert np.allclose(dN.sum(-2), 0.0, atol=1e-15)


def test_pou_sums_to_one():
    m = build_mesh(5, 3, 3, (2.0, 1.0))
    pou = partition_of_unity(m)
    assert np.max(np.abs(pou.values.sum(-1) - 1.0)) <= 1e-14
    assert pou.values.min() >= 0 and pou.values.max() <= 1
    assert np.allclose(pou.gradients.sum(-2), 0.0, atol=1e-12)


def test_pou_nodal_property():
    m = build_mesh(3, 3, 2)
    nodes = [(ix * m.Hx, iy * m.Hy) for iy in range(4) for ix in range(4)]
    for i in range(16):
        vals = np.array([hat_value(m, i, x, y) for x, y in nodes])
        expect = np.zeros(16)
        expect[i] = 1
        assert np.allclose(vals, expect, atol=1e-15)


def test_pou_matches_hat_function():
    m = build_mesh(3, 2, 2)
    pou = partition_of_unity(m)
    c = 7
    for a in range(4):
        i = pou.node_ids[c, a]
        x, y = pou.points[c, :, 0], pou.points[c, :, 1]
        assert np.allclose(pou.values[c, :, a], hat_value(m, i, x, y), atol=1e-15)


def test_pou_gradient_bound():
    m = build_mesh(15, 15, 3)
    pou = partition_of_unity(m)
    # on a Gauss point the slope is (1/H)(1 - eta) for the steepest hat
    gx = np.abs(pou.gradients[..., 0]).max()
    assert gx <= 15 + 1e-12
    # closed-form value at the Gauss point nearest a coarse edge
    eta_min = QUAD_POINTS[:, 1].min() / m.nf
    assert gx == pytest.approx(15 * (1 - eta_min), rel=1e-12)
    assert np.max(np.abs(pou.gradients)) * m.H == pytest.approx(1 - eta_min, rel=1e-12)
    # the supremum 1/H is attained at the coarse nodes
    _, g = hat_gradients(np.array([0.0, 1.0]), np.array([0.0, 1.0]), m.Hx, m.Hy)
    assert np.abs(g[..., 0]).max() == pytest.approx(15.0, abs=1e-12)


def test_coarse_neighborhood_is_pou_support():
    m = build_mesh(3, 3, 2)
    pou = partition_of_unity(m)
    for i in (0, 5, 15):
        hosts = np.unique(m.cell_element[np.any(pou.node_ids == i, axis=1)])
        assert np.array_equal(hosts, coarse_neighborhood(m, i))
