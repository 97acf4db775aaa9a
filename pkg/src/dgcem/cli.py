"""Command-line entry point: ``dgcem run|sweep|decay|gen-medium``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import write_triplets
from .bench import (
    LAYER_RULES,
    FULL_SCALE,
    RunConfig,
    _Context,
    emit_plots,
    load_config,
    run_single,
    run_sweep,
    write_csv,
    write_timings,
)
from .grid import build_mesh
from .media import MEDIUM_KINDS, generate_medium, save_medium
from .msbasis import MODES, BasisBuilder, decay_profile
from .solver import save_solution, solve_multiscale

log = logging.getLogger("dgcem")


def _csv_list(conv):
    def parse(text):
        try:
            return tuple(conv(v.strip()) for v in text.split(",") if v.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc

    return parse


def _noc(text):
    return "auto" if text == "auto" else int(text)


def _add_run_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="flat key = value config file")
    g.add_argument("--paper-scale", "--full-scale", dest="paper_scale", action="store_true", help="15x15 coarse, 15x15 fine, Nbf 6, Noc 5")
    g.add_argument("--nc", type=int, help="coarse elements per axis (x)")
    g.add_argument("--nc-y", type=int, help="coarse elements along y (default: --nc)")
    g.add_argument("--nf", type=int, help="fine cells per coarse element per axis")
    g.add_argument("--extent", type=float, nargs=2, metavar=("LX", "LY"))
    g.add_argument("--medium", choices=MEDIUM_KINDS)
    g.add_argument("--contrast", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--medium-file", help="Young's modulus raster written by gen-medium")
    g.add_argument("--nu", type=float, help="Poisson ratio")
    g.add_argument("--force", type=float, nargs=2, metavar=("FX", "FY"))
    g.add_argument("--gamma", type=float, help="penalty parameter")
    g.add_argument("--eta", type=int, choices=(-1, 0, 1), help="1 SIPG, 0 IIPG, -1 NIPG")
    g.add_argument("--mode", choices=MODES)
    g.add_argument("--nbf", type=int, help="auxiliary functions per coarse element")
    g.add_argument("--noc", type=_noc, help="oversampling layers or 'auto'")
    g.add_argument("--layer-rule", choices=LAYER_RULES)
    g.add_argument("--output", help="output directory")
    g.add_argument("--name", help="basename of output files")
    g.add_argument("--workers", type=int)


def _add_sweep_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("sweep axes (comma separated)")
    g.add_argument("--sweep-nbf", type=_csv_list(int))
    g.add_argument("--sweep-noc", type=_csv_list(_noc))
    g.add_argument("--sweep-h", type=_csv_list(lambda s: float(Fraction(s))), help="coarse sizes, e.g. 1/4,1/8")
    g.add_argument("--sweep-contrast", type=_csv_list(float))
    g.add_argument("--sweep-mode", type=_csv_list(str))
    g.add_argument("--pairing", choices=("cartesian", "paired"))
    g.add_argument("--fine-cells", type=int, help="fine cells per axis held fixed in H sweeps")


_FIELDS = (
    "nc nc_y nf extent medium contrast seed medium_file nu force gamma eta mode nbf noc layer_rule output name "
    "workers sweep_nbf sweep_noc sweep_h sweep_contrast sweep_mode pairing fine_cells"
).split()


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "paper_scale", False):  # full-scale preset
        cfg = replace(cfg, **FULL_SCALE)
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    changes = {}
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = tuple(v) if isinstance(v, list) else v
    if "name" not in changes and cfg.name == RunConfig.name and getattr(args, "command", None):
        changes["name"] = args.command
    cfg = replace(cfg, **changes)
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    rows = [run_single(cfg)]
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / f"{cfg.name}.csv")
    write_timings(rows, out / f"{cfg.name}_timings.csv")
    r = rows[0]
    print(f"status={r.status} e_l2={r.e_l2:.6e} e_h1={r.e_h1:.6e} e_h1_vol={r.e_h1_vol:.6e}")
    if args.dump_solution or args.dump_matrix or args.dump_basis:
        _dumps(cfg, out, args)
    return 0 if r.ok else 1


def _dumps(cfg: RunConfig, out: Path, args) -> None:
    ctx = _Context(cfg)
    if args.dump_matrix:
        write_triplets(ctx.A, out / f"{cfg.name}_adg.txt")
    if args.dump_solution or args.dump_basis:
        basis = BasisBuilder(ctx.ops, ctx.aux(cfg.nbf), ctx.config).build(cfg.mode, cfg.layers)
        if args.dump_basis:
            write_triplets(basis.R, out / f"{cfg.name}_basis.txt")
        if args.dump_solution:
            _, u_ms, _ = solve_multiscale(basis, ctx.A, ctx.F)
            save_solution(out / f"{cfg.name}_u_fine.txt", ctx.reference())
            save_solution(out / f"{cfg.name}_u_ms.txt", u_ms)
            np.savetxt(out / f"{cfg.name}_dof_coords.txt", ctx.mesh.dof_coords, fmt="%.17g")


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    rows = run_sweep(cfg, plots=not args.no_plots)
    for k, r in enumerate(rows):
        c = r.config
        print(f"[{k}] mode={c.mode} H={c.extent[0] / c.nc:g} nbf={c.nbf} noc={c.layers} "
              f"contrast={c.contrast:g} e_h1={r.e_h1:.4e} status={r.status}")  # fmt: skip
    print(f"wrote {Path(cfg.output) / (cfg.name + '.csv')}")
    return 0 if all(r.ok for r in rows) else 1


def _pairs(text: str):
    out = []
    for item in text.split(","):
        j, _, i = item.strip().partition(":")
        out.append((int(j), int(i)))
    return out


def cmd_decay(args) -> int:
    cfg = config_from_args(args)
    ctx = _Context(cfg)
    builder = BasisBuilder(ctx.ops, ctx.aux(cfg.nbf), ctx.config)
    if args.pairs:
        pairs = _pairs(args.pairs)
    else:
        rng = np.random.default_rng(cfg.seed)
        pairs = [(int(rng.integers(ctx.mesh.n_elements)), int(rng.integers(cfg.nbf))) for _ in range(args.count)]
    for j, i in pairs:
        if not (0 <= j < ctx.mesh.n_elements and 0 <= i < cfg.nbf):
            raise SystemExit(f"pair {j}:{i} outside 0..{ctx.mesh.n_elements - 1}:0..{cfg.nbf - 1}")
    modes = MODES if args.both else (cfg.mode,)
    norm = ctx.ops.norm_matrix(ctx.config)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    with open(out / f"{cfg.name}_decay.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "j", "i", "p", "gap", "slope"])
        for mode in modes:
            for j, i in pairs:
                prof = decay_profile(builder, mode, j, i, args.pmax, norm)
                for p, gap in zip(prof.layers, prof.gaps):
                    w.writerow([mode, j, i, int(p), f"{gap:.10g}", f"{prof.slope:.6g}"])
                    if p >= 1 and gap > 0:
                        records.append({"mode": f"{mode} {j}:{i}", "noc": int(p), "e_h1": gap,
                                        "nbf": cfg.nbf, "contrast": cfg.contrast, "H": 0})  # fmt: skip
                print(f"{mode} j={j} i={i} gaps=" + " ".join(f"{g:.2e}" for g in prof.gaps) + f" slope={prof.slope:.3f}")
    if records and not args.no_plots:
        emit_plots(records, out / f"{cfg.name}_decay.svg", "noc")
    return 0


def cmd_gen_medium(args) -> int:
    cfg = config_from_args(args)
    mesh = build_mesh(cfg.nc, cfg.nc if cfg.nc_y is None else cfg.nc_y, cfg.nf, cfg.extent)
    E = generate_medium(cfg.medium, mesh, cfg.contrast, cfg.seed)
    save_medium(E, args.path)
    print(f"wrote {args.path}: {E.shape[1]}x{E.shape[0]} cells, {int((E > E.min()).sum())} stiff")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dgcem", description="DG-coupled CEM-GMsFEM for 2D linear elasticity")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="single configuration")
    _add_run_options(p)
    p.add_argument("--dump-solution", action="store_true", help="write fine and multiscale solutions")
    p.add_argument("--dump-matrix", action="store_true", help="write a_DG as (row, col, value) triplets")
    p.add_argument("--dump-basis", action="store_true", help="write the basis matrix as triplets")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="parameter sweep to CSV and SVG")
    _add_run_options(p)
    _add_sweep_options(p)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("decay", help="localisation gap of basis columns against layers")
    _add_run_options(p)
    p.add_argument("--pairs", help="comma separated j:i pairs (default: random)")
    p.add_argument("--count", type=int, default=5, help="random pairs to draw")
    p.add_argument("--pmax", type=int, default=4)
    p.add_argument("--both", action="store_true", help="both basis modes")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("gen-medium", help="write a synthetic Young's modulus raster")
    _add_run_options(p)
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_gen_medium)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
