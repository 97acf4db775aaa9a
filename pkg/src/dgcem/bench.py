"""Convergence-study harness: single runs, parameter sweeps, CSV and plots.

Config files are flat ``key = value`` text; ``#`` starts a comment and list
values (sweeps) are comma separated. Recognised keys are the field names of
:class:`RunConfig` (``force`` takes ``fx, fy``; ``extent`` takes ``Lx, Ly``).
Coarse sizes in ``sweep_h`` may be written as fractions (``1/8``).
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .assembly import AssemblyConfig, IPDGOperators, assemble_source, coercivity_probe
from .grid import build_mesh, partition_of_unity
from .media import MEDIUM_KINDS, generate_medium, load_medium, material_from_modulus, voigt_tensor, weight_k1
from .msbasis import MODES, BasisBuilder, build_auxiliary_space
from .solver import (
    ZeroReferenceError,
    compute_errors,
    l2_weight_matrix,
    solve_multiscale,
    solve_reference,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "schema",
    "mode",
    "nc_x",
    "nc_y",
    "nf",
    "H",
    "nbf",
    "noc",
    "medium",
    "contrast",
    "seed",
    "nu",
    "fx",
    "fy",
    "gamma",
    "eta",
    "ndof_fine",
    "ndof_coarse",
    "e_l2",
    "e_h1",
    "e_h1_vol",
    "status",
)
TIMING_COLUMNS = ("row", "t_setup", "t_spectral", "t_basis", "t_coarse", "t_reference", "t_total")
SWEEP_KEYS = ("sweep_nbf", "sweep_noc", "sweep_h", "sweep_contrast", "sweep_mode")
LAYER_RULES = ("floor", "table")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.cause = exc


def auto_layers(H: float, rule: str = "floor") -> int:
    """Oversampling layers from the coarse size.

    ``floor`` is ``4 * floor(log H / log(1/7.5))``; ``table`` is
    ``round(4 + log2(1 / (7.5 H)))``, which reproduces the pairs
    (4, 1/7.5), (5, 1/15), (6, 1/30), (7, 1/60). Both are clamped to >= 1.
    """
    if rule == "floor":
        n = 4 * math.floor(math.log(H) / math.log(1 / 7.5) + 1e-12)
    elif rule == "table":
        n = round(4 + math.log2(1 / (7.5 * H)))
    else:
        raise ValueError(f"unknown layer rule {rule!r}; expected one of {LAYER_RULES}")
    return max(1, int(n))


@dataclass(frozen=True)
class RunConfig:
    nc: int = 8
    nc_y: int | None = None
    nf: int = 8
    extent: tuple[float, float] = (1.0, 1.0)
    medium: str = "channels_plus_inclusions"
    contrast: float = 1e4
    seed: int = 2024
    medium_file: str | None = None
    nu: float = 0.25
    force: tuple[float, float] = (0.0, 1.0)
    gamma: float = 8.0
    eta: int = 1
    mode: str = "relaxed"
    nbf: int = 6
    noc: int | str = 4
    layer_rule: str = "floor"
    fine_cells: int | None = None
    output: str = "results"
    name: str = "sweep"
    workers: int = 1
    sweep_nbf: tuple = ()
    sweep_noc: tuple = ()
    sweep_h: tuple = ()
    sweep_contrast: tuple = ()
    sweep_mode: tuple = ()
    pairing: str = "cartesian"

    def validate(self) -> None:
        if self.nc < 1 or (self.nc_y is not None and self.nc_y < 1) or self.nf < 1:
            raise ValueError("mesh counts must be positive")
        if self.nbf < 1:
            raise ValueError(f"nbf must be >= 1, got {self.nbf}")
        if self.noc != "auto" and int(self.noc) < 1:
            raise ValueError(f"noc must be >= 1 or 'auto', got {self.noc}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.medium not in MEDIUM_KINDS:
            raise ValueError(f"medium must be one of {MEDIUM_KINDS}, got {self.medium!r}")
        if self.layer_rule not in LAYER_RULES:
            raise ValueError(f"layer_rule must be one of {LAYER_RULES}")
        if self.pairing not in ("cartesian", "paired"):
            raise ValueError("pairing must be 'cartesian' or 'paired'")
        for key in ("sweep_nbf", "sweep_noc"):
            for v in getattr(self, key):
                if v != "auto" and int(v) < 1:
                    raise ValueError(f"{key} entries must be >= 1")
        for m in self.sweep_mode:
            if m not in MODES:
                raise ValueError(f"sweep_mode entries must be in {MODES}")
        AssemblyConfig(self.gamma, self.eta)

    @property
    def layers(self) -> int:
        if self.noc == "auto":
            return auto_layers(1.0 / self.nc, self.layer_rule)
        return int(self.noc)


FULL_SCALE = dict(nc=15, nf=15, nbf=6, noc=5, contrast=1e4)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def _parse_h(text: str) -> float:
    return float(Fraction(text.strip()))


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key in ("nc", "nf", "seed", "eta", "nbf", "workers"):
        return int(raw)
    if key in ("nc_y", "fine_cells"):
        return None if raw.lower() in ("", "none") else int(raw)
    if key in ("contrast", "nu", "gamma"):
        return float(raw)
    if key == "noc":
        return "auto" if raw == "auto" else int(raw)
    if key in ("force", "extent"):
        vals = tuple(float(v) for v in raw.split(","))
        if len(vals) != 2:
            raise ValueError(f"{key} needs two comma-separated values")
        return vals
    if key == "medium_file":
        return raw or None
    if key == "sweep_nbf":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if key == "sweep_noc":
        return tuple("auto" if v.strip() == "auto" else int(v) for v in raw.split(",") if v.strip())
    if key == "sweep_h":
        return tuple(_parse_h(v) for v in raw.split(",") if v.strip())
    if key == "sweep_contrast":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if key == "sweep_mode":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    return raw


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.lower().replace("-", "_")
        if key not in _FIELD_NAMES:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    cfg = replace(base or RunConfig(), **values)
    cfg.validate()
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------


@dataclass
class ResultRow:
    config: RunConfig
    ndof_fine: int = 0
    ndof_coarse: int = 0
    e_l2: float = float("nan")
    e_h1: float = float("nan")
    e_h1_vol: float = float("nan")
    status: str = "ok"
    timings: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def csv_record(self) -> dict:
        c = self.config
        nc_y = c.nc if c.nc_y is None else c.nc_y
        return {
            "schema": SCHEMA_VERSION,
            "mode": c.mode,
            "nc_x": c.nc,
            "nc_y": nc_y,
            "nf": c.nf,
            "H": _fmt(c.extent[0] / c.nc),
            "nbf": c.nbf,
            "noc": c.layers,
            "medium": "file" if c.medium_file else c.medium,
            "contrast": _fmt(c.contrast),
            "seed": c.seed,
            "nu": _fmt(c.nu),
            "fx": _fmt(c.force[0]),
            "fy": _fmt(c.force[1]),
            "gamma": _fmt(c.gamma),
            "eta": c.eta,
            "ndof_fine": self.ndof_fine,
            "ndof_coarse": self.ndof_coarse,
            "e_l2": _fmt(self.e_l2),
            "e_h1": _fmt(self.e_h1),
            "e_h1_vol": _fmt(self.e_h1_vol),
            "status": self.status,
        }


def _fmt(v) -> str:
    return f"{float(v):.10g}"


class _Context:
    """Per-medium state shared by rows that differ only in basis settings."""

    def __init__(self, cfg: RunConfig):
        nc_y = cfg.nc if cfg.nc_y is None else cfg.nc_y
        self.mesh = build_mesh(cfg.nc, nc_y, cfg.nf, cfg.extent)
        if cfg.medium_file:
            E = load_medium(cfg.medium_file, self.mesh.fine_shape)
        else:
            E = generate_medium(cfg.medium, self.mesh, cfg.contrast, cfg.seed)
        self.material = material_from_modulus(E, cfg.nu)
        self.weights = weight_k1(self.material, partition_of_unity(self.mesh))
        self.config = AssemblyConfig(cfg.gamma, cfg.eta)
        self.probe = coercivity_probe(E, cfg.nu, self.config)
        self.ops = IPDGOperators(self.mesh, voigt_tensor(self.material))
        self.A = self.ops.adg(self.config)
        self.F = assemble_source(self.mesh, cfg.force)
        self._aux = {}
        self._ref = None

    def aux(self, nbf: int):
        if nbf not in self._aux:
            self._aux[nbf] = build_auxiliary_space(self.ops, self.weights, nbf)
        return self._aux[nbf]

    def reference(self):
        if self._ref is None:
            self._ref = solve_reference(self.A, self.F)[0]
        return self._ref


def _context_key(cfg: RunConfig):
    return (cfg.nc, cfg.nc_y, cfg.nf, cfg.extent, cfg.medium, cfg.contrast, cfg.seed, cfg.medium_file, cfg.nu,
            cfg.force, cfg.gamma, cfg.eta)  # fmt: skip


def run_single(cfg: RunConfig, cache: dict | None = None) -> ResultRow:
    """Full pipeline for one configuration; failures are recorded, not raised."""
    row = ResultRow(config=cfg)
    t0 = time.perf_counter()
    stage = "config"
    try:
        cfg.validate()
        stage = "setup"
        key = _context_key(cfg)
        ctx = cache.get(key) if cache is not None else None
        if ctx is None:
            ctx = _Context(cfg)
            if cache is not None:
                cache[key] = ctx
        row.ndof_fine = ctx.mesh.ndof
        t1 = time.perf_counter()
        stage = "spectral"
        aux = ctx.aux(cfg.nbf)
        t2 = time.perf_counter()
        stage = "basis"
        basis = BasisBuilder(ctx.ops, aux, ctx.config).build(cfg.mode, cfg.layers, workers=1)
        row.ndof_coarse = basis.n_columns
        t3 = time.perf_counter()
        stage = "reference"
        u_h = ctx.reference()
        t4 = time.perf_counter()
        stage = "coarse"
        _, u_ms, _ = solve_multiscale(basis, ctx.A, ctx.F)
        t5 = time.perf_counter()
        stage = "errors"
        try:
            row.e_l2, row.e_h1, row.e_h1_vol = compute_errors(
                u_ms, u_h, ctx.A, l2_weight_matrix(ctx.ops, ctx.material), ctx.ops.volume()
            )
        except ZeroReferenceError:
            row.status = "zero_reference"
        row.timings = {
            "t_setup": t1 - t0,
            "t_spectral": t2 - t1,
            "t_basis": t3 - t2,
            "t_reference": t4 - t3,
            "t_coarse": t5 - t4,
        }
    except Exception as exc:  # recorded per row
        log.exception("run failed in stage %s", stage)
        row.status = f"error[{stage}]: {type(exc).__name__}: {exc}".replace("\n", " ")
    row.timings["t_total"] = time.perf_counter() - t0
    return row


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _row_config(base: RunConfig, point: dict) -> RunConfig:
    changes = {}
    if "nbf" in point:
        changes["nbf"] = point["nbf"]
    if "noc" in point:
        changes["noc"] = point["noc"]
    if "contrast" in point:
        changes["contrast"] = point["contrast"]
    if "mode" in point:
        changes["mode"] = point["mode"]
    if "h" in point:
        H = point["h"]
        nc = round(base.extent[0] / H)
        if not math.isclose(nc * H, base.extent[0], rel_tol=1e-9):
            raise ValueError(f"coarse size {H} does not divide the domain width {base.extent[0]}")
        fine = base.fine_cells or base.nc * base.nf
        if fine % nc:
            raise ValueError(f"{fine} fine cells per axis cannot be split into {nc} coarse cells")
        changes.update(nc=nc, nc_y=None, nf=fine // nc)
    return replace(base, **changes)


def sweep_points(cfg: RunConfig) -> list[dict]:
    axes = [(k.removeprefix("sweep_"), getattr(cfg, k)) for k in SWEEP_KEYS if getattr(cfg, k)]
    if not axes:
        return [{}]
    names = [a for a, _ in axes]
    if cfg.pairing == "paired":
        lengths = {len(v) for _, v in axes}
        if len(lengths) != 1:
            raise ValueError("paired sweeps need lists of equal length")
        combos = zip(*(v for _, v in axes))
    else:
        combos = itertools.product(*(v for _, v in axes))
    return [dict(zip(names, c)) for c in combos]


def sweep_configs(cfg: RunConfig) -> list[RunConfig]:
    cfg.validate()
    return [_row_config(cfg, pt) for pt in sweep_points(cfg)]


def run_sweep(cfg: RunConfig, write: bool = True, plots: bool = True) -> list[ResultRow]:
    """Run every sweep point; rows keep configuration order."""
    configs = sweep_configs(cfg)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(run_single, configs))
    else:
        cache: dict = {}
        rows = [run_single(c, cache) for c in configs]
    if write:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(rows, out / f"{cfg.name}.csv")
        write_timings(rows, out / f"{cfg.name}_timings.csv")
        if plots:
            x_key = plot_axis(cfg)
            if x_key is not None:
                emit_plots(rows, out / f"{cfg.name}_{x_key}.svg", x_key)
    return rows


def csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.csv_record())
    return buf.getvalue()


def write_csv(rows, path) -> None:
    Path(path).write_text(csv_text(rows), encoding="utf-8")


def write_timings(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMING_COLUMNS)
        for k, r in enumerate(rows):
            w.writerow([k] + [f"{r.timings.get(c, float('nan')):.4f}" for c in TIMING_COLUMNS[1:]])


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

_AXIS_COLUMN = {"nbf": "nbf", "noc": "noc", "h": "H", "contrast": "contrast"}
_AXIS_LABEL = {"nbf": "Nbf", "noc": "Noc", "h": "H", "contrast": "contrast"}


def plot_axis(cfg: RunConfig) -> str | None:
    for key in ("sweep_h", "sweep_nbf", "sweep_noc", "sweep_contrast"):
        if len(getattr(cfg, key)) > 1:
            return key.removeprefix("sweep_")
    return None


def emit_plots(rows, path, x_key: str, y_key: str = "e_h1") -> Path:
    """Error against one swept parameter, one curve per remaining setting."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = [r.csv_record() if isinstance(r, ResultRow) else dict(r) for r in rows]
    records = [r for r in records if r.get("status", "ok") == "ok"]
    if not records:
        raise ValueError("no successful rows to plot")
    col = _AXIS_COLUMN[x_key]
    varying = [
        k for k in ("mode", "nbf", "noc", "contrast", "H") if k != col and len({str(r[k]) for r in records}) > 1
    ]
    curves: dict[tuple, list] = {}
    for r in records:
        curves.setdefault(tuple(str(r[k]) for k in varying), []).append((float(r[col]), float(r[y_key])))
    with matplotlib.rc_context({"svg.hashsalt": "dgcem", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        for label, pts in curves.items():
            pts.sort()
            xs, ys = zip(*pts)
            name = ", ".join(f"{k}={v}" for k, v in zip(varying, label)) or y_key
            ax.plot(xs, ys, marker="o", label=name)
        if x_key in ("h", "contrast"):
            ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(_AXIS_LABEL[x_key])
        ax.set_ylabel({"e_h1": "relative energy error e_H1", "e_l2": "relative L2 error e_L2"}.get(y_key, y_key))
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return path


def log_slope(xs, ys) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
