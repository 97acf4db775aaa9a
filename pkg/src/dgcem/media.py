"""Isotropic heterogeneous media: Lame fields, Voigt tensors and the k1 weight."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Mesh, PartitionOfUnity

MEDIUM_KINDS = ("uniform", "channels", "inclusions", "channels_plus_inclusions")
# feature density: one channel per CHANNEL_SPACING fine cells of the longer
# raster side, one inclusion per INCLUSION_AREA fine cells
CHANNEL_SPACING = 16
INCLUSION_AREA = 256
HEADER = "elastic-medium v1"


class MediumFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialField:
    E: np.ndarray  # (ny, nx)
    nu: float
    lam: np.ndarray
    mu: np.ndarray

    @property
    def k2(self) -> np.ndarray:
        return self.lam + 2 * self.mu

    @property
    def contrast(self) -> float:
        return float(self.E.max() / self.E.min())

    @property
    def shape(self) -> tuple[int, int]:
        return self.E.shape


@dataclass(frozen=True)
class VoigtTensor:
    """Per-cell entries of the 3x3 Voigt matrix and the 2x2 penalty diagonal."""

    c11: np.ndarray
    c13: np.ndarray
    c33: np.ndarray
    c55: np.ndarray
    d: np.ndarray  # (ny, nx, 2) diagonal of the displacement penalty matrix

    @property
    def lam(self) -> np.ndarray:
        return self.c13

    @property
    def mu(self) -> np.ndarray:
        return self.c55

    def matrices(self) -> np.ndarray:
        """(n_cells, 3, 3) Voigt matrices in raster order."""
        c11, c13, c33, c55 = (a.ravel() for a in (self.c11, self.c13, self.c33, self.c55))
        C = np.zeros((c11.size, 3, 3))
        C[:, 0, 0] = c11
        C[:, 0, 1] = C[:, 1, 0] = c13
        C[:, 1, 1] = c33
        C[:, 2, 2] = c55
        return C


@dataclass(frozen=True)
class WeightField:
    k1: np.ndarray  # (n_cells, 4) values at the 2x2 Gauss points of each fine cell


def material_from_modulus(E, nu: float = 0.25) -> MaterialField:
    E = np.array(E, dtype=float)
    if E.ndim != 2:
        raise ValueError("E raster must be two-dimensional (ny, nx)")
    if not np.all(np.isfinite(E)) or np.any(E <= 0):
        raise ValueError("Young's modulus must be finite and positive everywhere")
    if not -1.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    lam = nu * E / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    return MaterialField(E=E, nu=float(nu), lam=lam, mu=mu)


def voigt_tensor(m: MaterialField) -> VoigtTensor:
    k2 = m.k2
    return VoigtTensor(c11=k2, c13=m.lam.copy(), c33=k2.copy(), c55=m.mu.copy(), d=np.stack([k2, k2], axis=-1))


def weight_k1(m: MaterialField, pou: PartitionOfUnity) -> WeightField:
    """k1 = sum_i k2 |grad chi_i|^2 at every fine-cell Gauss point."""
    g = pou.grad_sq_sum()
    if g.shape[0] != m.E.size:
        raise ValueError(f"partition of unity has {g.shape[0]} cells, medium has {m.E.size}")
    return WeightField(k1=m.k2.ravel()[:, None] * g)


def generate_medium(kind: str, mesh: Mesh, contrast: float, seed: int = 2024) -> np.ndarray:
    """Binary synthetic medium: background 1, features equal to ``contrast``.

    The geometry depends only on the fine raster shape and the seed, so the
    same physical medium is produced for different coarse partitions of one
    fine grid.
    """
    if kind not in MEDIUM_KINDS:
        raise ValueError(f"unknown medium kind {kind!r}; expected one of {MEDIUM_KINDS}")
    if not contrast >= 1:
        raise ValueError(f"contrast must be >= 1, got {contrast}")
    ny, nx = mesh.fine_shape
    E = np.ones((ny, nx))
    if kind == "uniform":
        return E
    rng = np.random.default_rng(seed)
    mask = np.zeros((ny, nx), dtype=bool)
    if kind in ("channels", "channels_plus_inclusions"):
        _draw_channels(mask, rng)
    if kind in ("inclusions", "channels_plus_inclusions"):
        _draw_inclusions(mask, rng)
    E[mask] = contrast
    return E


def _draw_channels(mask: np.ndarray, rng: np.random.Generator) -> None:
    ny, nx = mask.shape
    n = max(ny, nx)
    width = max(1, n // 64)
    count = max(2, n // CHANNEL_SPACING)
    for k in range(count):
        horizontal = k % 2 == 0
        along, across = (nx, ny) if horizontal else (ny, nx)
        length = int(rng.integers(max(2, along // 4), max(3, (2 * along) // 3) + 1))
        start = int(rng.integers(0, max(1, along - length) + 1))
        pos = int(rng.integers(0, max(1, across - width) + 1))
        if horizontal:
            mask[pos : pos + width, start : start + length] = True
        else:
            mask[start : start + length, pos : pos + width] = True


def _draw_inclusions(mask: np.ndarray, rng: np.random.Generator) -> None:
    ny, nx = mask.shape
    size = max(1, max(nx, ny) // 32)
    count = max(1, (nx * ny) // INCLUSION_AREA)
    for _ in range(count):
        y = int(rng.integers(0, max(1, ny - size) + 1))
        x = int(rng.integers(0, max(1, nx - size) + 1))
        mask[y : y + size, x : x + size] = True


def save_medium(E, path) -> None:
    E = np.asarray(E, dtype=float)
    if E.ndim != 2:
        raise ValueError("E raster must be two-dimensional (ny, nx)")
    ny, nx = E.shape
    lines = [f"{HEADER} {nx} {ny}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in E)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_medium(path, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Read a medium file; ``shape`` = (ny, nx) checks it against a mesh."""
    text = Path(path).read_text(encoding="utf-8")
    head, _, body = text.partition("\n")
    parts = head.split()
    if len(parts) != 4 or " ".join(parts[:2]) != HEADER:
        raise MediumFormatError(f"bad header {head!r}; expected '{HEADER} <nx> <ny>'")
    try:
        nx, ny = int(parts[2]), int(parts[3])
        values = np.array([float(t) for t in body.split()])
    except ValueError as exc:
        raise MediumFormatError(str(exc)) from exc
    if nx < 1 or ny < 1 or values.size != nx * ny:
        raise MediumFormatError(f"header announces {nx}x{ny} cells, file holds {values.size} values")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise MediumFormatError("Young's modulus values must be finite and positive")
    E = values.reshape(ny, nx)
    if shape is not None and tuple(shape) != E.shape:
        raise MediumFormatError(f"medium is {E.shape[0]}x{E.shape[1]} (ny x nx), mesh expects {shape[0]}x{shape[1]}")
    return E
