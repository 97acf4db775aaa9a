"""Hot assembly kernels.

Each kernel has a numba implementation and a vectorised numpy twin with the
same signature; the public names dispatch on :data:`dgcem._accel.USE_NUMBA`.
Both paths must agree to round-off (see ``tests/test_kernels.py``).
"""

import numpy as np

from . import _accel
from ._accel import njit


# ---------------------------------------------------------------------------
# edge operators
# ---------------------------------------------------------------------------
#
# For a batch of M edge segments with 2 Gauss points each and S sides
# (S = 2 interior, S = 1 boundary-type) compute
#
#   Q = sum_g w_g J^T Savg          (consistency, {sigma(u)} : [[v]])
#   P = sum_g w_g (J^T Cavg J + V^T Davg V)   (penalty, without gamma / h)
#
# where J maps local DOFs to the engineering-Voigt matrix jump, Savg to the
# averaged Voigt stress and V to the vector jump.
#
# shapes: N (M, 2, S, 4), G (M, 2, S, 4, 2), C (M, S, 3, 3), k2 (M, S),
#         normal (M, 2) of side 0, w (M, 2)


def _edge_operators_numpy(N, G, C, k2, normal, w):
    M, _, S, _ = N.shape
    nd = 8 * S
    sign = np.array([1.0, -1.0])[:S]
    n = normal[:, None, None, :] * sign[None, None, :, None]  # (M, 1, S, 2)
    # strain-displacement B[..., row, node, comp]
    B = np.zeros(N.shape[:3] + (3, 4, 2))
    B[..., 0, :, 0] = G[..., 0]
    B[..., 1, :, 1] = G[..., 1]
    B[..., 2, :, 0] = G[..., 1]
    B[..., 2, :, 1] = G[..., 0]
    J = np.zeros_like(B)
    J[..., 0, :, 0] = n[..., 0:1] * N
    J[..., 1, :, 1] = n[..., 1:2] * N
    J[..., 2, :, 0] = n[..., 1:2] * N
    J[..., 2, :, 1] = n[..., 0:1] * N
    V = np.zeros(N.shape[:3] + (2, 4, 2))
    V[..., 0, :, 0] = N * sign[None, None, :, None]
    V[..., 1, :, 1] = N * sign[None, None, :, None]
    B = B.reshape(M, 2, S, 3, 8)
    J = np.moveaxis(J.reshape(M, 2, S, 3, 8), 2, 3).reshape(M, 2, 3, nd)
    V = np.moveaxis(V.reshape(M, 2, S, 2, 8), 2, 3).reshape(M, 2, 2, nd)
    Sig = np.einsum("msij,mgsjk->mgsik", C, B) / S
    Sig = np.moveaxis(Sig, 2, 3).reshape(M, 2, 3, nd)
    Cavg = C.mean(axis=1)
    Davg = k2.mean(axis=1)
    Q = np.einsum("mg,mgia,mgib->mab", w, J, Sig)
    P = np.einsum("mg,mgia,mij,mgjb->mab", w, J, Cavg, J)
    P += np.einsum("mg,m,mgia,mgib->mab", w, Davg, V, V)
    return Q, P


@njit(cache=True)
def _edge_operators_numba(N, G, C, k2, normal, w):
    M = N.shape[0]
    S = N.shape[2]
    nd = 8 * S
    Q = np.zeros((M, nd, nd))
    P = np.zeros((M, nd, nd))
    J = np.zeros((3, nd))
    Sg = np.zeros((3, nd))
    V = np.zeros((2, nd))
    Ca = np.zeros((3, 3))
    for m in range(M):
        Ca[:, :] = 0.0
        da = 0.0
        for s in range(S):
            Ca += C[m, s] / S
            da += k2[m, s] / S
        for g in range(2):
            J[:, :] = 0.0
            Sg[:, :] = 0.0
            V[:, :] = 0.0
            for s in range(S):
                sg = 1.0 if s == 0 else -1.0
                n1 = normal[m, 0] * sg
                n2 = normal[m, 1] * sg
                for a in range(4):
                    ix = 8 * s + 2 * a
                    iy = ix + 1
                    Na = N[m, g, s, a]
                    gx = G[m, g, s, a, 0]
                    gy = G[m, g, s, a, 1]
                    J[0, ix] = n1 * Na
                    J[1, iy] = n2 * Na
                    J[2, ix] = n2 * Na
                    J[2, iy] = n1 * Na
                    V[0, ix] = sg * Na
                    V[1, iy] = sg * Na
                    # sigma = C B u / S, B columns for (ix, iy)
                    for r in range(3):
                        Sg[r, ix] = (C[m, s, r, 0] * gx + C[m, s, r, 2] * gy) / S
                        Sg[r, iy] = (C[m, s, r, 1] * gy + C[m, s, r, 2] * gx) / S
            wg = w[m, g]
            for a in range(nd):
                for b in range(nd):
                    q = 0.0
                    p = 0.0
                    for r in range(3):
                        q += J[r, a] * Sg[r, b]
                        t = 0.0
                        for c in range(3):
                            t += Ca[r, c] * J[c, b]
                        p += J[r, a] * t
                    p += da * (V[0, a] * V[0, b] + V[1, a] * V[1, b])
                    Q[m, a, b] += wg * q
                    P[m, a, b] += wg * p
    return Q, P


# ---------------------------------------------------------------------------
# triplet scatter
# ---------------------------------------------------------------------------


def _scatter_numpy(local, dofs, g2l):
    ld = g2l[dofs]
    k = dofs.shape[1]
    rows = np.repeat(ld, k, axis=1).ravel()
    cols = np.tile(ld, (1, k)).ravel()
    vals = local.reshape(-1)
    keep = (rows >= 0) & (cols >= 0)
    return rows[keep], cols[keep], vals[keep]


@njit(cache=True)
def _scatter_numba(local, dofs, g2l):
    M, k = dofs.shape
    rows = np.empty(M * k * k, dtype=np.int64)
    cols = np.empty(M * k * k, dtype=np.int64)
    vals = np.empty(M * k * k)
    n = 0
    for m in range(M):
        for a in range(k):
            ra = g2l[dofs[m, a]]
            if ra < 0:
                continue
            for b in range(k):
                cb = g2l[dofs[m, b]]
                if cb < 0:
                    continue
                rows[n] = ra
                cols[n] = cb
                vals[n] = local[m, a, b]
                n += 1
    return rows[:n], cols[:n], vals[:n]


# ---------------------------------------------------------------------------
# weighted vector mass
# ---------------------------------------------------------------------------
#
# weights (M, 4) at the 2x2 Gauss points (already times |cell| and Gauss
# weight), Nq (4, 4) shape values at those points -> (M, 8, 8)


def _weighted_mass_numpy(weights, Nq):
    m4 = np.einsum("cq,qa,qb->cab", weights, Nq, Nq)
    out = np.zeros((weights.shape[0], 8, 8))
    out[:, 0::2, 0::2] = m4
    out[:, 1::2, 1::2] = m4
    return out


@njit(cache=True)
def _weighted_mass_numba(weights, Nq):
    M = weights.shape[0]
    out = np.zeros((M, 8, 8))
    for c in range(M):
        for a in range(4):
            for b in range(4):
                s = 0.0
                for q in range(4):
                    s += weights[c, q] * Nq[q, a] * Nq[q, b]
                out[c, 2 * a, 2 * b] = s
                out[c, 2 * a + 1, 2 * b + 1] = s
    return out


def edge_operators(N, G, C, k2, normal, w, use_numba=None):
    if _accel.USE_NUMBA if use_numba is None else use_numba:
        return _edge_operators_numba(N, G, C, k2, normal, w)
    return _edge_operators_numpy(N, G, C, k2, normal, w)


def scatter(local, dofs, g2l, use_numba=None):
    if _accel.USE_NUMBA if use_numba is None else use_numba:
        return _scatter_numba(np.ascontiguousarray(local), np.ascontiguousarray(dofs), g2l)
    return _scatter_numpy(local, dofs, g2l)


def weighted_mass(weights, Nq, use_numba=None):
    if _accel.USE_NUMBA if use_numba is None else use_numba:
        return _weighted_mass_numba(np.ascontiguousarray(weights), Nq)
    return _weighted_mass_numpy(weights, Nq)
