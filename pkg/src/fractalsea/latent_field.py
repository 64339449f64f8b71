"""Fractal latent fields over a square domain via diamond-square subdivision.

A field assigns a d-dimensional latent vector to every vertex of a
(2**n + 1) square grid.  Corners are fixed, then each subdivision level k
runs a diamond step (square centers) and a square step (edge/diamond
centers); every new vertex is the mean of its in-scope shape vertices plus
``scale * decay**k`` times a standard normal draw.

Noise draws come from counter-based streams keyed by
(seed, level, row, col, dim), so the result is independent of evaluation
order and identical across worker counts.  With ``scale == 0`` the field
degenerates exactly to bilinear interpolation of the four corners; the
boundary rule in the square step (average the two in-grid neighbors that
run along the edge) is what makes that exact.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, ValidationError
from .rng import standard_normal

MAX_LEVELS = 14  # memory guard: (2**14 + 1)**2 vertices is the ceiling


@dataclass(frozen=True)
class FractalParams:
    """Inputs that fully determine one generated field."""

    levels: int
    scale: float
    decay: float
    seed: int
    corners: np.ndarray  # (4, d): top-left, top-right, bottom-left, bottom-right

    def __post_init__(self):
        corners = np.asarray(self.corners, dtype=np.float64)
        if corners.ndim != 2 or corners.shape[0] != 4 or corners.shape[1] < 1:
            raise DomainError(f"corners must be (4, d) with d >= 1, got {corners.shape}")
        if not np.all(np.isfinite(corners)):
            raise DomainError("corner latents must be finite")
        object.__setattr__(self, "corners", corners)
        if not (0 <= self.levels <= MAX_LEVELS):
            raise DomainError(f"levels must be in [0, {MAX_LEVELS}], got {self.levels}")
        if not (self.scale >= 0.0 and np.isfinite(self.scale)):
            raise DomainError(f"scale must be finite and >= 0, got {self.scale}")
        if not (0.0 < self.decay <= 1.0):
            raise DomainError(f"decay must be in (0, 1], got {self.decay}")

    @property
    def dim(self) -> int:
        return self.corners.shape[1]

    @property
    def resolution(self) -> int:
        return (1 << self.levels) + 1


@dataclass(frozen=True)
class LatentField:
    """Generated latent grid plus the parameters it came from."""

    grid: np.ndarray  # (res, res, d), row-major: grid[row, col]
    cell_extent: float
    params: FractalParams

    @property
    def resolution(self) -> int:
        return self.grid.shape[0]

    @property
    def dim(self) -> int:
        return self.grid.shape[2]

    @property
    def extent(self) -> float:
        """World-units side length of the covered square."""
        return (self.resolution - 1) * self.cell_extent


def _noise(seed: int, level: int, rows: np.ndarray, cols: np.ndarray, dim: int) -> np.ndarray:
    """Per-vertex, per-dimension normal draws for one subdivision level."""
    rr = rows[:, None, None]
    cc = cols[None, :, None]
    dd = np.arange(dim)[None, None, :]
    return standard_normal(seed, level, rr, cc, dd)


def _require_populated(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise RuntimeError(f"unpopulated prerequisite vertex in {what} (internal error)")


def diamond_step(grid: np.ndarray, level: int, params: FractalParams) -> None:
    """Fill the center of every level-`level` square with mean-of-4 + noise."""
    res = grid.shape[0]
    step = (res - 1) >> level
    half = step >> 1
    sub = grid[::step, ::step]
    _require_populated(sub, "diamond_step")
    mean = (sub[:-1, :-1] + sub[:-1, 1:] + sub[1:, :-1] + sub[1:, 1:]) / 4.0
    s_k = params.scale * params.decay**level
    if s_k != 0.0:
        rows = np.arange(half, res, step)
        mean = mean + s_k * _noise(params.seed, level, rows, rows, grid.shape[2])
    grid[half::step, half::step] = mean


def square_step(grid: np.ndarray, level: int, params: FractalParams) -> None:
    """Fill every level-`level` diamond center with mean-of-vertices + noise.

    A diamond vertex falling outside the grid drops the opposite vertex
    too: the value becomes the mean of the two neighbors running along the
    grid edge, which keeps the scale-0 case exactly bilinear.
    """
    res = grid.shape[0]
    step = (res - 1) >> level
    half = step >> 1
    s_k = params.scale * params.decay**level
    dim = grid.shape[2]
    on_lattice = np.arange(0, res, step)
    offset = np.arange(half, res, step)

    # family A: centers on vertical edges of squares (rows offset, cols on lattice)
    up = grid[np.ix_(offset - half, on_lattice)]
    down = grid[np.ix_(offset + half, on_lattice)]
    _require_populated(up, "square_step")
    _require_populated(down, "square_step")
    value = (up + down) / 2.0
    if on_lattice.size > 2:
        inner = on_lattice[1:-1]
        left = grid[np.ix_(offset, inner - half)]
        right = grid[np.ix_(offset, inner + half)]
        _require_populated(left, "square_step")
        _require_populated(right, "square_step")
        value[:, 1:-1] = (up[:, 1:-1] + down[:, 1:-1] + left + right) / 4.0
    if s_k != 0.0:
        value = value + s_k * _noise(params.seed, level, offset, on_lattice, dim)
    grid[np.ix_(offset, on_lattice)] = value

    # family B: centers on horizontal edges (rows on lattice, cols offset)
    left = grid[np.ix_(on_lattice, offset - half)]
    right = grid[np.ix_(on_lattice, offset + half)]
    _require_populated(left, "square_step")
    _require_populated(right, "square_step")
    value = (left + right) / 2.0
    if on_lattice.size > 2:
        inner = on_lattice[1:-1]
        up = grid[np.ix_(inner - half, offset)]
        down = grid[np.ix_(inner + half, offset)]
        _require_populated(up, "square_step")
        _require_populated(down, "square_step")
        value[1:-1, :] = (left[1:-1] + right[1:-1] + up + down) / 4.0
    if s_k != 0.0:
        value = value + s_k * _noise(params.seed, level, on_lattice, offset, dim)
    grid[np.ix_(on_lattice, offset)] = value


def generate_field(params: FractalParams, cell_extent: float = 1.0) -> LatentField:
    """Generate the full latent field for `params`.

    Deterministic: the same params always produce a bit-identical grid.
    """
    if cell_extent <= 0:
        raise DomainError(f"cell_extent must be positive, got {cell_extent}")
    res = params.resolution
    grid = np.full((res, res, params.dim), np.nan, dtype=np.float64)
    grid[0, 0] = params.corners[0]
    grid[0, -1] = params.corners[1]
    grid[-1, 0] = params.corners[2]
    grid[-1, -1] = params.corners[3]
    for level in range(params.levels):
        diamond_step(grid, level, params)
        square_step(grid, level, params)
    if not np.all(np.isfinite(grid)):
        raise RuntimeError("generation left unpopulated vertices (internal error)")
    return LatentField(grid=grid, cell_extent=float(cell_extent), params=params)


def bilinear_corners(params: FractalParams) -> np.ndarray:
    """Closed-form bilinear interpolation of the four corners on the full grid.

    This is the exact scale-0 field; kept as an independent reference
    surface for comparisons.
    """
    res = params.resolution
    t = np.linspace(0.0, 1.0, res)
    ty = t[:, None, None]
    tx = t[None, :, None]
    tl, tr, bl, br = params.corners
    return (1 - ty) * (1 - tx) * tl + (1 - ty) * tx * tr + ty * (1 - tx) * bl + ty * tx * br


def sample_latent(field: LatentField, x: float, y: float) -> np.ndarray:
    """Bilinear interpolation of the field at world coordinates (x, y).

    x runs along columns, y along rows.  Exact vertex coordinates return
    the stored vertex value.
    """
    extent = field.extent
    if not (0.0 <= x <= extent and 0.0 <= y <= extent):
        raise DomainError(f"({x}, {y}) outside field extent [0, {extent}]^2")
    gx = x / field.cell_extent
    gy = y / field.cell_extent
    res = field.resolution
    ix = min(int(np.floor(gx)), res - 2) if res > 1 else 0
    iy = min(int(np.floor(gy)), res - 2) if res > 1 else 0
    fx = gx - ix
    fy = gy - iy
    g = field.grid
    return ((1 - fy) * (1 - fx) * g[iy, ix]
            + (1 - fy) * fx * g[iy, ix + 1]
            + fy * (1 - fx) * g[iy + 1, ix]
            + fy * fx * g[iy + 1, ix + 1])


# --- serialization -----------------------------------------------------------

_MAGIC = "fractalsea-field"
_FORMAT_VERSION = "1"
_CORNER_KEYS = ("corner_tl", "corner_tr", "corner_bl", "corner_br")


def _fmt(x: float) -> str:
    return repr(float(x))


def save_field(field: LatentField, path) -> None:
    """Write a field as CSV: header key/value lines, then row-major vertices."""
    p = field.params
    lines = [
        f"{_MAGIC},{_FORMAT_VERSION}",
        f"levels,{p.levels}",
        f"dim,{p.dim}",
        f"scale,{_fmt(p.scale)}",
        f"decay,{_fmt(p.decay)}",
        f"seed,{p.seed}",
        f"cell_extent,{_fmt(field.cell_extent)}",
    ]
    for key, corner in zip(_CORNER_KEYS, p.corners):
        lines.append(key + "," + ",".join(_fmt(v) for v in corner))
    lines.append("grid")
    flat = field.grid.reshape(-1, field.dim)
    lines.extend(",".join(_fmt(v) for v in row) for row in flat)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_field(path) -> LatentField:
    """Read a field written by :func:`save_field` (bit-exact round trip)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",") != [_MAGIC, _FORMAT_VERSION]:
        raise ValidationError(f"{path}: not a {_MAGIC} v{_FORMAT_VERSION} file")
    header: dict[str, str] = {}
    corners: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines) and lines[i] != "grid":
        key, _, rest = lines[i].partition(",")
        if key in _CORNER_KEYS:
            corners[key] = np.array([float(v) for v in rest.split(",")])
        else:
            header[key] = rest
        i += 1
    if i == len(lines):
        raise ValidationError(f"{path}: missing grid section")
    missing = {"levels", "dim", "scale", "decay", "seed", "cell_extent"} - set(header)
    if missing or set(_CORNER_KEYS) - set(corners):
        raise ValidationError(f"{path}: incomplete header (missing {sorted(missing)})")
    params = FractalParams(
        levels=int(header["levels"]),
        scale=float(header["scale"]),
        decay=float(header["decay"]),
        seed=int(header["seed"]),
        corners=np.stack([corners[k] for k in _CORNER_KEYS]),
    )
    dim = int(header["dim"])
    res = params.resolution
    rows = lines[i + 1:]
    if len(rows) != res * res:
        raise ValidationError(f"{path}: expected {res * res} vertex rows, got {len(rows)}")
    grid = np.array([[float(v) for v in row.split(",")] for row in rows])
    if grid.shape[1] != dim:
        raise ValidationError(f"{path}: vertex rows have {grid.shape[1]} dims, header says {dim}")
    field = LatentField(grid=grid.reshape(res, res, dim),
                        cell_extent=float(header["cell_extent"]), params=params)
    if not np.array_equal(field.grid[0, 0], params.corners[0]):
        raise ValidationError(f"{path}: grid corners disagree with header corners")
    return field


def replace_params(params: FractalParams, **changes) -> FractalParams:
    """Convenience: a copy of params with some fields replaced."""
    return dataclasses.replace(params, **changes)
