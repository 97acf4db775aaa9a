#!/usr/bin/env python3
"""Numba vs numpy timing for the hot kernels and for full operator assembly.

    python benchmarks/bench_kernels.py [--segments 20000] [--repeat 5] [--nc 15 --nf 15]
"""

import argparse
import time

import numpy as np

from dgcem import _accel
from dgcem.assembly import AssemblyConfig, IPDGOperators
from dgcem.grid import build_mesh
from dgcem.kernels import edge_operators, scatter, weighted_mass
from dgcem.media import generate_medium, material_from_modulus, voigt_tensor


def edge_inputs(M, S, rng):
    N = rng.random((M, 2, S, 4))
    G = rng.standard_normal((M, 2, S, 4, 2))
    A = rng.standard_normal((M, S, 3, 3))
    C = A @ np.swapaxes(A, -1, -2)
    k2 = rng.random((M, S)) + 1.0
    normal = np.tile([1.0, 0.0], (M, 1))
    w = np.full((M, 2), 0.5)
    return N, G, C, k2, normal, w


def best_of(fn, repeat):
    fn()  # warm-up, includes jit compilation
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return min(ts)


def compare(name, fn, repeat):
    t_np = best_of(lambda: fn(False), repeat)
    if not _accel.NUMBA_AVAILABLE:
        print(f"{name:<18} numpy {t_np * 1e3:9.2f} ms   numba unavailable")
        return
    t_nb = best_of(lambda: fn(True), repeat)
    a, b = fn(False), fn(True)
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    diff = max(float(np.max(np.abs(x - y))) if x.size else 0.0 for x, y in zip(a, b))
    print(f"{name:<18} numpy {t_np * 1e3:9.2f} ms   numba {t_nb * 1e3:9.2f} ms   "
          f"speedup {t_np / t_nb:6.2f}x   max|diff| {diff:.1e}")  # fmt: skip


def assembly_time(nc, nf, use_numba, repeat):
    mesh = build_mesh(nc, nc, nf)
    voigt = voigt_tensor(material_from_modulus(generate_medium("channels_plus_inclusions", mesh, 1e4)))
    saved = _accel.USE_NUMBA
    _accel.USE_NUMBA = use_numba
    try:
        return best_of(lambda: IPDGOperators(mesh, voigt).adg(AssemblyConfig()), repeat)
    finally:
        _accel.USE_NUMBA = saved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--segments", type=int, default=20000, help="edge segments / cells per kernel call")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--nc", type=int, default=15)
    ap.add_argument("--nf", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    M = args.segments
    print(f"backend by default: {_accel.backend()}   segments: {M}")
    for S in (2, 1):
        inp = edge_inputs(M, S, rng)
        compare(f"edge_operators S={S}", lambda nb, inp=inp: edge_operators(*inp, use_numba=nb), args.repeat)

    local = rng.standard_normal((M, 16, 16))
    dofs = rng.integers(0, 4 * M, size=(M, 16))
    g2l = np.where(rng.random(4 * M) < 0.8, np.arange(4 * M), -1)
    compare("scatter", lambda nb: scatter(local, dofs, g2l, use_numba=nb), args.repeat)

    weights = rng.random((M, 4))
    Nq = rng.random((4, 4))
    compare("weighted_mass", lambda nb: weighted_mass(weights, Nq, use_numba=nb), args.repeat)

    t_np = assembly_time(args.nc, args.nf, False, max(1, args.repeat // 2))
    line = f"assembly {args.nc}x{args.nc}/{args.nf}x{args.nf}  numpy {t_np:.3f} s"
    if _accel.NUMBA_AVAILABLE:
        t_nb = assembly_time(args.nc, args.nf, True, max(1, args.repeat // 2))
        line += f"   numba {t_nb:.3f} s   speedup {t_np / t_nb:.2f}x"
    print(line)


if __name__ == "__main__":
    main()
