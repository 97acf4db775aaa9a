import numpy as np
import pytest
import scipy.sparse as sp

from dgcem.assembly import assemble_source
from dgcem.msbasis import BasisBuilder, SingularSystemError, build_auxiliary_space
from dgcem.solver import (
    CoarseSystem,
    ZeroReferenceError,
    backward_error,
    compute_errors,
    dg_norm,
    l2_weight_matrix,
    load_solution,
    save_solution,
    solve_and_compare,
    solve_multiscale,
    solve_reference,
)

from conftest import Problem


@pytest.fixture(scope="module")
def built(small):
    aux = build_auxiliary_space(small.ops, small.weights, 4)
    basis = BasisBuilder(small.ops, aux, small.config).build("relaxed", 1)
    u_h, res = solve_reference(small.A, small.F)
    return basis, u_h, res


def test_reference_residual_contract(small, built):
    _, u_h, res = built
    assert res <= 1e-9
    assert np.linalg.norm(small.A @ u_h - small.F) <= 1e-9 * np.linalg.norm(small.F)


def test_zero_force_gives_zero(small):
    u, res = solve_reference(small.A, np.zeros(small.mesh.ndof))
    assert not np.any(u) and res == 0.0


def test_linearity(small, built):
    _, u_h, _ = built
    u2, _ = solve_reference(small.A, 2 * small.F)
    assert np.max(np.abs(u2 - 2 * u_h)) <= 1e-10 * np.max(np.abs(u_h))


def test_reflection_symmetry_uniform(small_uniform):
    P = small_uniform
    u, _ = solve_reference(P.A, P.F)
    m = P.mesh
    coords = m.dof_coords[0::2]
    mirror = np.column_stack([1.0 - coords[:, 0], coords[:, 1]])
    # map every node to its mirror image in the mirrored block
    key = {}
    for k, (x, y) in enumerate(coords):
        key[(round(x, 12), round(y, 12), m.element_ij(k // m.nodes_per_block))] = k
    assert len(key) == len(coords)
    ux, uy = u[0::2], u[1::2]
    scale = np.max(np.abs(u))
    for k, (x, y) in enumerate(mirror):
        jx, jy = m.element_ij(k // m.nodes_per_block)
        kk = key[(round(x, 12), round(y, 12), (m.nc_x - 1 - jx, jy))]
        assert abs(ux[kk] + ux[k]) <= 1e-9 * scale
        assert abs(uy[kk] - uy[k]) <= 1e-9 * scale


def test_coarse_system_symmetric(small, built):
    basis, _, _ = built
    cs = CoarseSystem.from_basis(basis.R, small.A, small.F)
    assert cs.A_c.shape == (basis.n_columns,) * 2 == (small.mesh.n_elements * 4,) * 2
    assert np.max(np.abs(cs.A_c - cs.A_c.T)) <= 1e-12 * np.max(np.abs(cs.A_c))
    assert np.linalg.eigvalsh((cs.A_c + cs.A_c.T) / 2).min() > 0


def test_galerkin_orthogonality_and_residual(small, built):
    basis, u_h, _ = built
    c, u_ms, res = solve_multiscale(basis, small.A, small.F)
    assert res <= 1e-10
    assert np.allclose(u_ms, basis.R @ c)
    d = u_h - u_ms
    nu = dg_norm(small.N, u_h)
    for k in range(basis.n_columns):
        phi = basis.R[:, k].toarray().ravel()
        assert abs(phi @ (small.A @ d)) <= 1e-8 * nu * dg_norm(small.N, phi)


def test_galerkin_optimality(small, built):
    basis, u_h, _ = built
    c, u_ms, _ = solve_multiscale(basis, small.A, small.F)
    M = l2_weight_matrix(small.ops, small.material)
    best = compute_errors(u_ms, u_h, small.A, M)[1]
    rng = np.random.default_rng(0)
    for _ in range(20):
        trial = c + 0.05 * np.abs(c).max() * rng.standard_normal(c.size)
        assert best <= compute_errors(basis.R @ trial, u_h, small.A, M)[1]


def test_identity_basis_recovers_reference(small, built):
    _, u_h, _ = built
    _, u_ms, _ = solve_multiscale(sp.identity(small.mesh.ndof, format="csc"), small.A, small.F)
    assert np.max(np.abs(u_ms - u_h)) <= 1e-10 * np.max(np.abs(u_h))


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_singular_basis_flagged(small):
    R = sp.csc_matrix(np.ones((small.mesh.ndof, 2)))
    with pytest.raises(SingularSystemError, match="linearly dependent"):
        solve_multiscale(R, small.A, small.F)


def test_dg_norm_properties(small):
    rng = np.random.default_rng(1)
    assert dg_norm(small.N, np.zeros(small.mesh.ndof)) == 0
    v = rng.standard_normal(small.mesh.ndof)
    assert dg_norm(small.N, -3 * v) == pytest.approx(3 * dg_norm(small.N, v), rel=1e-13)
    for _ in range(20):
        v = rng.standard_normal(small.mesh.ndof)
        n2 = dg_norm(small.N, v) ** 2
        assert 0.5 * n2 <= v @ (small.A @ v) <= 2 * n2


def test_error_examples(small, built):
    _, u_h, _ = built
    M = l2_weight_matrix(small.ops, small.material)
    assert compute_errors(u_h, u_h, small.A, M) == (0.0, 0.0)
    el2, eh1 = compute_errors(np.zeros_like(u_h), u_h, small.A, M)
    assert el2 == pytest.approx(1.0, rel=1e-14) and eh1 == pytest.approx(1.0, rel=1e-14)
    u_ms = u_h + 1e-3 * np.random.default_rng(2).standard_normal(u_h.size) * np.abs(u_h).max()
    a = compute_errors(u_ms, u_h, small.A, M, small.ops.volume())
    b = compute_errors(7.5 * u_ms, 7.5 * u_h, small.A, M, small.ops.volume())
    assert np.allclose(a, b, rtol=1e-12)
    with pytest.raises(ZeroReferenceError):
        compute_errors(u_ms, np.zeros_like(u_h), small.A, M)


def test_l2_weight_matches_definition(small):
    """v^T M v equals the integral of ((lam + 2 mu) |v|)^2 by direct quadrature."""
    from dgcem.grid import QUAD_POINTS, QUAD_WEIGHTS, q1_shape

    m = small.mesh
    M = l2_weight_matrix(small.ops, small.material)
    v = np.random.default_rng(3).standard_normal(m.ndof)
    Nq, _ = q1_shape(QUAD_POINTS[:, 0], QUAD_POINTS[:, 1])
    vals = v[m.cell_dofs].reshape(-1, 4, 2)
    at_q = np.einsum("qa,cad->cqd", Nq, vals)
    k2 = small.material.k2.ravel()
    direct = np.sum(k2[:, None] ** 2 * QUAD_WEIGHTS * np.sum(at_q**2, -1)) * m.hx * m.hy
    assert v @ (M @ v) == pytest.approx(direct, rel=1e-12)


def test_nested_spaces_never_worse(small):
    aux = build_auxiliary_space(small.ops, small.weights, 4)
    b = BasisBuilder(small.ops, aux, small.config).build("relaxed", 1)
    u_h, _ = solve_reference(small.A, small.F)
    M = l2_weight_matrix(small.ops, small.material)
    R = b.R.toarray()
    keep = [k for k in range(b.n_columns) if k % 4 < 3]
    e_small = compute_errors(solve_multiscale(R[:, keep], small.A, small.F)[1], u_h, small.A, M)[1]
    e_full = compute_errors(solve_multiscale(R, small.A, small.F)[1], u_h, small.A, M)[1]
    assert e_full <= e_small


def test_downscaling_uses_covering_columns(small, built):
    basis, _, _ = built
    m = small.mesh
    G = basis.G
    blk_of_row = np.arange(m.ndof) // m.dofs_per_block
    C = basis.R.tocoo()
    owner = C.col // G
    for r, j in zip(blk_of_row[C.row], owner):
        assert r in basis.regions[j].elements


def test_solve_and_compare_report(small, built):
    basis, u_h, _ = built
    rep = solve_and_compare(small.ops, small.material, small.config, basis, small.F, u_h)
    assert 0 <= rep.e_l2 < 1 and 0 <= rep.e_h1 < 1 and rep.e_h1_vol >= 0
    assert rep.residual_fine <= 1e-9 and rep.residual_coarse <= 1e-10
    assert rep.dg_norm_fine > 0
    fresh = solve_and_compare(small.ops, small.material, small.config, basis, small.F)
    assert fresh.e_h1 == pytest.approx(rep.e_h1, rel=1e-8)


def test_high_contrast_reference_backward_stable():
    P = Problem(4, 4, contrast=1e6)
    u, res = solve_reference(P.A, P.F)
    assert backward_error(P.A, u, P.F) <= 1e-13
    assert res <= 1e-6


def test_backward_error_small_dense():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    x = np.linalg.solve(A, b)
    assert backward_error(A, x, b) <= 1e-15
    assert backward_error(A, x + 1e-3, b) > 1e-5


def test_solution_roundtrip(tmp_path, built):
    _, u_h, _ = built
    save_solution(tmp_path / "u.txt", u_h)
    assert np.array_equal(load_solution(tmp_path / "u.txt"), u_h)


def test_source_region_consistent(small):
    assert np.array_equal(assemble_source(small.mesh, (0.0, 1.0)), small.F)
