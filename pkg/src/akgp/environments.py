"""Ground-truth worlds: elevation rasters and two 1-D test functions.

Raster file format (plain text)::

    rows cols x_min x_max y_min y_max
    v00 v01 ... v0(cols-1)
    ...

Row 0 is the northern edge (``y = y_max``), column 0 the western edge
(``x = x_min``).  Grid nodes sit exactly on the extent boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class RasterFormatError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RasterEnv:
    values: np.ndarray
    extent: tuple[float, float, float, float]
    obs_noise_std: float = 1.0
    name: str = "raster"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 2:
            raise RasterFormatError(f"raster needs at least 2x2 values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise RasterFormatError("raster contains non-finite values")
        x_min, x_max, y_min, y_max = self.extent
        if not (x_min < x_max and y_min < y_max):
            raise RasterFormatError(f"degenerate extent {self.extent}")
        if self.obs_noise_std < 0:
            raise ValueError("obs_noise_std must be non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def dim(self) -> int:
        return 2


def load_raster(path, obs_noise_std: float = 1.0) -> RasterEnv:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise RasterFormatError("empty raster file")
    header = lines[0].split()
    if len(header) != 6:
        raise RasterFormatError(f"header needs 6 fields, got {len(header)}")
    try:
        rows, cols = int(header[0]), int(header[1])
        extent = tuple(float(v) for v in header[2:])
    except ValueError as err:
        raise RasterFormatError(f"malformed header: {lines[0]!r}") from err
    body = lines[1:]
    if len(body) != rows:
        raise RasterFormatError(f"expected {rows} rows, found {len(body)}")
    values = np.empty((rows, cols))
    for i, line in enumerate(body):
        fields = line.split()
        if len(fields) != cols:
            raise RasterFormatError(f"row {i} has {len(fields)} values, expected {cols}")
        try:
            values[i] = [float(v) for v in fields]
        except ValueError as err:
            raise RasterFormatError(f"row {i}: {err}") from err
        if not np.all(np.isfinite(values[i])):
            raise RasterFormatError(f"row {i} contains non-finite values")
    return RasterEnv(values, extent, obs_noise_std, name=Path(path).stem)


def save_raster(env: RasterEnv, path) -> None:
    rows, cols = env.shape
    out = [" ".join([str(rows), str(cols)] + [repr(e) for e in env.extent])]
    out += [" ".join(repr(float(v)) for v in row) for row in env.values]
    Path(path).write_text("\n".join(out) + "\n")


def _clamp(env: RasterEnv, X: np.ndarray) -> np.ndarray:
    x_min, x_max, y_min, y_max = env.extent
    lo, hi = np.array([x_min, y_min]), np.array([x_max, y_max])
    clamped = np.clip(X, lo, hi)
    if np.any(clamped != X):
        log.warning("clamped %d query point(s) to the workspace extent",
                    int(np.any(clamped != X, axis=1).sum()))
    return clamped


def query_truth(env: RasterEnv, X) -> np.ndarray | float:
    """Bilinear interpolation of the raster at one location or an ``(N, 2)`` array."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = _clamp(env, X.reshape(-1, 2))
    rows, cols = env.shape
    x_min, x_max, y_min, y_max = env.extent
    # fractional column/row index; row 0 is y_max
    u = (X[:, 0] - x_min) / (x_max - x_min) * (cols - 1)
    v = (y_max - X[:, 1]) / (y_max - y_min) * (rows - 1)
    j0 = np.clip(np.floor(u).astype(int), 0, cols - 2)
    i0 = np.clip(np.floor(v).astype(int), 0, rows - 2)
    fu, fv = u - j0, v - i0
    V = env.values
    top = V[i0, j0] * (1 - fu) + V[i0, j0 + 1] * fu
    bottom = V[i0 + 1, j0] * (1 - fu) + V[i0 + 1, j0 + 1] * fu
    out = top * (1 - fv) + bottom * fv
    return float(out[0]) if single else out


def observe(env, X, rng: np.random.Generator) -> np.ndarray:
    """Noisy measurements ``truth(x) + N(0, obs_noise_std^2)``."""
    X = np.asarray(X, dtype=float)
    if isinstance(env, Synthetic1D):
        truth = np.atleast_1d(synth_eval(env, X.ravel()))
    else:
        truth = np.atleast_1d(query_truth(env, X.reshape(-1, 2)))
    noise = rng.normal(0.0, 1.0, size=truth.shape) * env.obs_noise_std
    return truth + noise


def grid_points(extent, resolution: tuple[int, int]) -> np.ndarray:
    """Uniform ``(nx * ny, 2)`` grid covering the extent, x varying fastest."""
    x_min, x_max, y_min, y_max = extent
    nx, ny = resolution
    xs, ys = np.linspace(x_min, x_max, nx), np.linspace(y_min, y_max, ny)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


# ---------------------------------------------------------------------------
# 1-D functions
# ---------------------------------------------------------------------------

FIVE_PARTITION_BOUNDS = (0.2, 0.4, 0.6, 0.8)


def five_partition(x):
    """Piecewise reference function on ``[0, 1]`` with five regimes.

    ======  ===========  ==========================================
    part    interval     expression
    ======  ===========  ==========================================
    1       [0.0, 0.2)   ``1.0 + 0.5 sin(2.5 pi x)``
    2       [0.2, 0.4)   ``-1.0 + 2.5 (x - 0.2)``
    3       [0.4, 0.6)   ``0.6 sin(50 pi (x - 0.4))``
    4       [0.6, 0.8)   ``1.5 - 10 (x - 0.7)^2``
    5       [0.8, 1.0]   ``-0.8 + 0.4 cos(2 pi (x - 0.8))``
    ======  ===========  ==========================================

    Part 3 oscillates rapidly; the other parts are smooth, and the function
    jumps at every boundary.
    """
    x = np.asarray(x, dtype=float)
    conds = [x < 0.2, (x >= 0.2) & (x < 0.4), (x >= 0.4) & (x < 0.6),
             (x >= 0.6) & (x < 0.8), x >= 0.8]
    funcs = [
        lambda t: 1.0 + 0.5 * np.sin(2.5 * np.pi * t),
        lambda t: -1.0 + 2.5 * (t - 0.2),
        lambda t: 0.6 * np.sin(50.0 * np.pi * (t - 0.4)),
        lambda t: 1.5 - 10.0 * (t - 0.7) ** 2,
        lambda t: -0.8 + 0.4 * np.cos(2.0 * np.pi * (t - 0.8)),
    ]
    return np.piecewise(x, conds, funcs)


def x_sin_40x4(x):
    x = np.asarray(x, dtype=float)
    return x * np.sin(40.0 * x ** 4)


SYNTHETIC_1D = {"five_partition": five_partition, "xsin40x4": x_sin_40x4}


@dataclass(frozen=True)
class Synthetic1D:
    function_id: str = "five_partition"
    obs_noise_std: float = 0.1
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.function_id not in SYNTHETIC_1D:
            raise ValueError(f"unknown function id {self.function_id!r}")

    @property
    def extent(self) -> tuple[float, float]:
        return self.domain

    @property
    def dim(self) -> int:
        return 1

    @property
    def name(self) -> str:
        return self.function_id


def synth_eval(env: Synthetic1D, x):
    x_arr = np.asarray(x, dtype=float)
    lo, hi = env.domain
    if np.any((x_arr < lo) | (x_arr > hi)) or not np.all(np.isfinite(x_arr)):
        raise DomainError(f"{env.function_id} is defined on [{lo}, {hi}]")
    out = SYNTHETIC_1D[env.function_id](x_arr)
    return float(out) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------------------
# Synthetic rasters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RasterSpec:
    """Recipe for a generated raster.

    ``generator`` is ``"piecewise"`` (flat band, rolling hills, rocky
    high-frequency band with a cliff) or ``"gp"`` (a stationary RBF-GP draw
    approximated with random Fourier features).
    """

    generator: str = "piecewise"
    seed: int = 0
    rows: int = 100
    cols: int = 100
    extent: tuple[float, float, float, float] = (0.0, 10.0, 0.0, 10.0)
    obs_noise_std: float = 1.0
    gp_lengthscale: float = 1.5
    gp_amplitude: float = 20.0


# region boundaries along x, as fractions of the width
FLAT_END, ROCKY_START = 0.3, 0.6


def region_masks(env_or_spec, X) -> dict[str, np.ndarray]:
    """Boolean masks of the flat / hills / rocky regions for locations ``X``."""
    x_min, x_max = env_or_spec.extent[:2]
    frac = (np.asarray(X, dtype=float)[:, 0] - x_min) / (x_max - x_min)
    return {"flat": frac < FLAT_END,
            "hills": (frac >= FLAT_END) & (frac < ROCKY_START),
            "rocky": frac >= ROCKY_START}


def _piecewise_field(spec: RasterSpec, u: np.ndarray, v: np.ndarray, rng) -> np.ndarray:
    # u, v in [0, 1]; elevation in metres-like units
    flat = 100.0 + 2.0 * u + 1.0 * v
    hills = np.zeros_like(u)
    for _ in range(4):
        cu, cv = rng.uniform(FLAT_END, ROCKY_START), rng.uniform(0.1, 0.9)
        width, height = rng.uniform(0.08, 0.15), rng.uniform(15.0, 30.0)
        hills += height * np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * width ** 2))
    rocky = np.zeros_like(u)
    for _ in range(6):
        freq = rng.uniform(12.0, 25.0)
        angle, phase = rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi)
        rocky += rng.uniform(4.0, 8.0) * np.sin(
            freq * np.pi * (u * np.cos(angle) + v * np.sin(angle)) + phase)
    # smooth ramp from flat into hills; the rocky band sits on a raised cliff
    ramp = 0.5 * (1 + np.tanh((u - FLAT_END) / 0.03))
    field = flat + ramp * hills
    cliff = u >= ROCKY_START
    field = np.where(cliff, 140.0 + 10.0 * v + rocky, field)
    return field


def _gp_field(spec: RasterSpec, X: np.ndarray, rng, num_features: int = 2000) -> np.ndarray:
    omega = rng.normal(0.0, 1.0 / spec.gp_lengthscale, size=(num_features, 2))
    phase = rng.uniform(0.0, 2 * np.pi, size=num_features)
    weights = rng.normal(size=num_features)
    feats = np.cos(X @ omega.T + phase) * math.sqrt(2.0 / num_features)
    return math.sqrt(spec.gp_amplitude) * feats @ weights


def make_synthetic_raster(spec: RasterSpec = RasterSpec()) -> RasterEnv:
    rng = np.random.default_rng(spec.seed)
    x_min, x_max, y_min, y_max = spec.extent
    # row 0 is north
    xs = np.linspace(x_min, x_max, spec.cols)
    ys = np.linspace(y_max, y_min, spec.rows)
    gx, gy = np.meshgrid(xs, ys)
    if spec.generator == "piecewise":
        u = (gx - x_min) / (x_max - x_min)
        v = (gy - y_min) / (y_max - y_min)
        values = _piecewise_field(spec, u, v, rng)
    elif spec.generator == "gp":
        values = _gp_field(spec, np.column_stack([gx.ravel(), gy.ravel()]), rng)
        values = values.reshape(gx.shape)
    else:
        raise ValueError(f"unknown raster generator {spec.generator!r}")
    return RasterEnv(values, spec.extent, spec.obs_noise_std,
                     name=f"{spec.generator}{spec.seed}")
