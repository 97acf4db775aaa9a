"""Fine IPDG reference solve, coarse multiscale solve and error metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import AssemblyConfig, IPDGOperators, weighted_mass_matrix
from .media import MaterialField
from .msbasis import MultiscaleBasis, SingularSystemError

REFERENCE_TOL = 1e-9
COARSE_TOL = 1e-10
# accepted when the relative residual is float-limited (high contrast):
# ||Ax - b|| / (||A|| ||x|| + ||b||), infinity norms
BACKWARD_TOL = 1e-13

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class ZeroReferenceError(ZeroDivisionError):
    """The reference solution vanishes, so relative errors are undefined."""


def _rel_res(A, x, b):
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(A @ x - b) / nb) if nb > 0 else float(np.linalg.norm(A @ x))


def backward_error(A, x, b) -> float:
    """Normwise backward error of ``x`` as a solution of ``A x = b``."""
    if sp.issparse(A):
        na = spla.norm(A, np.inf)
    else:
        na = np.linalg.norm(A, np.inf)
    den = na * np.abs(x).max() + np.abs(b).max()
    return float(np.abs(A @ x - b).max() / den) if den > 0 else 0.0


def _accept(A, x, b, res, tol, what):
    if res <= tol:
        return True
    if np.isfinite(res) and backward_error(A, x, b) <= BACKWARD_TOL:
        log.warning("%s: relative residual %.2e above %.0e is at the float64 floor (backward stable)", what, res, tol)
        return True
    return False


def solve_reference(A: sp.spmatrix, F: np.ndarray) -> tuple[np.ndarray, float]:
    """Sparse LU solve of the fine system with iterative refinement."""
    if not np.any(F):
        return np.zeros_like(F, dtype=float), 0.0
    lu = spla.splu(sp.csc_matrix(A))
    u = lu.solve(F)
    res = _rel_res(A, u, F)
    for _ in range(3):
        if res <= REFERENCE_TOL:
            break
        u = u + lu.solve(F - A @ u)
        res = _rel_res(A, u, F)
    if not _accept(A, u, F, res, REFERENCE_TOL, "reference solve"):
        raise SolverError(f"reference solve did not converge: relative residual {res:.3e}")
    return u, res


@dataclass
class CoarseSystem:
    R: sp.csc_matrix
    A_c: np.ndarray
    rhs_c: np.ndarray

    @classmethod
    def from_basis(cls, R, A, F) -> "CoarseSystem":
        R = sp.csc_matrix(R)
        A_c = np.asarray((R.T @ (A @ R)).todense())
        return cls(R=R, A_c=A_c, rhs_c=R.T @ F)


def solve_multiscale(basis, A: sp.spmatrix, F: np.ndarray):
    """Galerkin solve on span of the basis columns.

    ``basis`` is a :class:`MultiscaleBasis` or any (ndof x m) matrix.
    Returns ``(coefficients, u_ms, relative_residual)``.
    """
    R = basis.R if isinstance(basis, MultiscaleBasis) else basis
    cs = CoarseSystem.from_basis(R, A, F)
    if not np.any(cs.rhs_c):
        return np.zeros(cs.A_c.shape[0]), np.zeros(R.shape[0]), 0.0
    try:
        lu = scipy.linalg.lu_factor(cs.A_c, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"coarse system cannot be factorised: {exc}") from exc
    with np.errstate(all="ignore"):
        c = scipy.linalg.lu_solve(lu, cs.rhs_c)
        res = _rel_res(cs.A_c, c, cs.rhs_c)
        for _ in range(3):
            if res <= COARSE_TOL or not np.isfinite(res):
                break
            c = c + scipy.linalg.lu_solve(lu, cs.rhs_c - cs.A_c @ c)
            res = _rel_res(cs.A_c, c, cs.rhs_c)
    if not _accept(cs.A_c, c, cs.rhs_c, res, COARSE_TOL, "coarse solve"):
        raise SingularSystemError(
            f"coarse system is (nearly) singular, relative residual {res:.3e}; "
            "the basis may be linearly dependent, try a larger gamma or fewer basis functions"
        )
    return c, cs.R @ c, res


def dg_norm(norm_matrix: sp.spmatrix, v: np.ndarray) -> float:
    """sqrt of sum_K int eps:C:eps + gamma/h sum_E int ([[v]]:C:[[v]] + [[v]].D.[[v]])."""
    return float(np.sqrt(max(v @ (norm_matrix @ v), 0.0)))


def l2_weight_matrix(ops: IPDGOperators, material: MaterialField) -> sp.csr_matrix:
    """Mass with weight (lambda + 2 mu)^2, so v^T M v = ||(lambda + 2 mu) v||^2."""
    k2 = material.k2.ravel()
    return weighted_mass_matrix(ops.mesh, np.repeat((k2**2)[:, None], 4, axis=1))


def compute_errors(u_ms, u_h, A, M_l2, K_vol=None):
    """Relative (lambda + 2 mu)-weighted L2 error and relative a_DG energy error.

    With ``K_vol`` a third value, the volume-only energy error, is returned.
    """
    d = np.asarray(u_ms) - np.asarray(u_h)
    den_l2 = u_h @ (M_l2 @ u_h)
    den_a = u_h @ (A @ u_h)
    if den_l2 <= 0 or den_a <= 0:
        raise ZeroReferenceError("reference solution is zero; relative errors are undefined")
    e_l2 = np.sqrt(max(d @ (M_l2 @ d), 0.0) / den_l2)
    e_h1 = np.sqrt(max(d @ (A @ d), 0.0) / den_a)
    if K_vol is None:
        return float(e_l2), float(e_h1)
    e_vol = np.sqrt(max(d @ (K_vol @ d), 0.0) / max(u_h @ (K_vol @ u_h), 1e-300))
    return float(e_l2), float(e_h1), float(e_vol)


@dataclass
class SolveReport:
    u_fine: np.ndarray = field(repr=False)
    u_ms: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)
    e_l2: float
    e_h1: float
    e_h1_vol: float
    dg_norm_fine: float
    dg_norm_ms: float
    residual_fine: float
    residual_coarse: float
    timings: dict = field(default_factory=dict)


def solve_and_compare(
    ops: IPDGOperators, material: MaterialField, config: AssemblyConfig, basis, F: np.ndarray, u_h=None
) -> SolveReport:
    A = ops.adg(config)
    if u_h is None:
        u_h, res_f = solve_reference(A, F)
    else:
        res_f = _rel_res(A, u_h, F)
    c, u_ms, res_c = solve_multiscale(basis, A, F)
    N = ops.norm_matrix(config)
    e_l2, e_h1, e_vol = compute_errors(u_ms, u_h, A, l2_weight_matrix(ops, material), ops.volume())
    return SolveReport(
        u_fine=u_h,
        u_ms=u_ms,
        coefficients=c,
        e_l2=e_l2,
        e_h1=e_h1,
        e_h1_vol=e_vol,
        dg_norm_fine=dg_norm(N, u_h),
        dg_norm_ms=dg_norm(N, u_ms),
        residual_fine=res_f,
        residual_coarse=res_c,
    )


def save_solution(path, u: np.ndarray) -> None:
    """Per-DOF text dump in grid DOF order, one value per line."""
    np.savetxt(path, np.asarray(u), fmt="%.17g")


def load_solution(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=1)
