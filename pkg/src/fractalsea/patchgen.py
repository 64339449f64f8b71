"""Conditional RGBD patch generation and inpainting.

The generator contract is: ``generate(latent, seed)`` produces a patch
deterministically, and ``inpaint(patch, mask, seed, latent=None)`` fills
the unknown pixels while preserving known pixels bit-exactly.  The
reference implementation is procedural: latent[0] steers texture roughness
(base frequency of a value-noise octave stack), latent[1] steers the color
palette (sand vs. reef), depth is the per-patch normalized heightfield.

Inpainting is a discrete Laplace blend.  Write the fill as

    fill = base + h,      laplacian(h) = 0 on the fill domain,
                          h = (known - base) next to known pixels,

so the fill keeps the procedural texture's high-frequency detail while its
low frequencies are harmonized to the surrounding known content.
Unconditional mode synthesizes base content from the seed alone and blends
over the whole unknown region; conditional mode anchors base content to the
given latent and blends only in a thin band near the known boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from PIL import Image
from scipy import ndimage, sparse
from scipy.sparse.linalg import splu

from .errors import DomainError
from .rng import uniform01

DEFAULT_PATCH_SIZE = 224
DEFAULT_BLEND_BANDWIDTH = 8


@dataclass
class RgbdPatch:
    """An RGB + relative-depth image, all channels in [0, 1]."""

    rgb: np.ndarray    # (H, W, 3) float64
    depth: np.ndarray  # (H, W) float64

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise DomainError(f"rgb must be (H, W, 3), got {self.rgb.shape}")
        if self.depth.shape != self.rgb.shape[:2]:
            raise DomainError(
                f"depth shape {self.depth.shape} does not match rgb {self.rgb.shape[:2]}")
        for name, chan in (("rgb", self.rgb), ("depth", self.depth)):
            if not np.all(np.isfinite(chan)):
                raise DomainError(f"{name} contains non-finite values")
            if chan.min() < 0.0 or chan.max() > 1.0:
                raise DomainError(f"{name} values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def copy(self) -> "RgbdPatch":
        return RgbdPatch(rgb=self.rgb.copy(), depth=self.depth.copy())


def validate_mask(mask: np.ndarray, patch: RgbdPatch) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        raise DomainError(f"mask must be boolean, got dtype {mask.dtype}")
    if mask.shape != (patch.height, patch.width):
        raise DomainError(f"mask shape {mask.shape} does not match patch "
                          f"{(patch.height, patch.width)}")
    return mask


class ConditionalGenerator(Protocol):
    """Deterministic conditional patch source; implementations must state
    whether concurrent invocation is safe (the reference one is)."""

    patch_size: int
    thread_safe: bool

    def generate(self, latent: np.ndarray, seed: int) -> RgbdPatch: ...

    def inpaint(self, patch: RgbdPatch, mask: np.ndarray, seed: int,
                latent: np.ndarray | None = None,
                content_origin: tuple[int, int] = (0, 0)) -> RgbdPatch: ...


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


def _fade(t: np.ndarray) -> np.ndarray:
    # quintic fade: C2-continuous interpolation between lattice values
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _value_noise(seed: int, octave: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Value noise at lattice coordinates (u, v): hash at integer corners,
    quintic-faded bilinear blend.  Pure per-point, so any window of the
    same content frame agrees bit-exactly."""
    iu = np.floor(u).astype(np.int64)
    iv = np.floor(v).astype(np.int64)
    fu = _fade(u - iu)
    fv = _fade(v - iv)
    c00 = uniform01(seed, octave, iu, iv)
    c10 = uniform01(seed, octave, iu + 1, iv)
    c01 = uniform01(seed, octave, iu, iv + 1)
    c11 = uniform01(seed, octave, iu + 1, iv + 1)
    top = c00 + fu * (c10 - c00)
    bottom = c01 + fu * (c11 - c01)
    return top + fv * (bottom - top)


# palette endpoints: (low height, high height) colors for each of two looks
_PALETTE_SAND = (np.array([0.52, 0.45, 0.31]), np.array([0.88, 0.81, 0.63]))
_PALETTE_REEF = (np.array([0.04, 0.15, 0.22]), np.array([0.15, 0.56, 0.50]))
_LIGHT_DIR = np.array([-0.45, -0.55, 0.70]) / np.linalg.norm([-0.45, -0.55, 0.70])


@dataclass
class ReferenceGenerator:
    """Procedural conditional generator (pure per-pixel, thread safe)."""

    patch_size: int = DEFAULT_PATCH_SIZE
    blend_bandwidth: int = DEFAULT_BLEND_BANDWIDTH
    octaves: int = 4
    slope_gain: float = 60.0
    thread_safe: bool = True

    # --- procedural content ---------------------------------------------

    def _height(self, latent: np.ndarray, seed: int,
                ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Octave-stacked value noise in [0, 1] at content-frame pixel coords."""
        base_freq = 2.0 + 10.0 * _sigmoid(float(latent[0]))
        yy = ys[:, None].astype(np.float64)
        xx = xs[None, :].astype(np.float64)
        total = np.zeros((ys.size, xs.size))
        amp_sum = 0.0
        for octave in range(self.octaves):
            freq = base_freq * (2.0**octave)
            amp = 0.5**octave
            scale = freq / self.patch_size
            total += amp * _value_noise(seed, octave, xx * scale, yy * scale)
            amp_sum += amp
        return total / amp_sum

    def _norm_constants(self, latent: np.ndarray, seed: int) -> tuple[float, float]:
        """Min/max of the heightfield over the canonical patch window
        [0, patch_size)^2 of the content frame.  Fixed per (latent, seed),
        so windowed evaluations agree with the standalone patch."""
        coords = np.arange(self.patch_size)
        h = self._height(latent, seed, coords, coords)
        return float(h.min()), float(h.max())

    def _render_region(self, latent: np.ndarray, seed: int,
                       y0: int, x0: int, height: int, width: int
                       ) -> tuple[np.ndarray, np.ndarray]:
        """RGB + depth content for a window of the content frame."""
        ys = np.arange(y0 - 1, y0 + height + 1)
        xs = np.arange(x0 - 1, x0 + width + 1)
        h_ext = self._height(latent, seed, ys, xs)
        h = h_ext[1:-1, 1:-1]
        lo, hi = self._norm_constants(latent, seed)
        if hi - lo > 1e-12:
            t = np.clip((h - lo) / (hi - lo), 0.0, 1.0)
        else:
            t = np.zeros_like(h)

        mix = _sigmoid(float(latent[1]))
        low = (1.0 - mix) * _PALETTE_SAND[0] + mix * _PALETTE_REEF[0]
        high = (1.0 - mix) * _PALETTE_SAND[1] + mix * _PALETTE_REEF[1]
        color = low + t[:, :, None] * (high - low)

        # lambert-ish shading from central differences of the raw heightfield
        gx = (h_ext[1:-1, 2:] - h_ext[1:-1, :-2]) * 0.5 * self.slope_gain
        gy = (h_ext[2:, 1:-1] - h_ext[:-2, 1:-1]) * 0.5 * self.slope_gain
        norm = np.sqrt(gx**2 + gy**2 + 1.0)
        ndotl = (-gx * _LIGHT_DIR[0] - gy * _LIGHT_DIR[1] + _LIGHT_DIR[2]) / norm
        shade = 0.72 + 0.28 * ndotl
        rgb = np.clip(color * shade[:, :, None], 0.0, 1.0)
        return rgb, t

    # --- generator contract ----------------------------------------------

    @staticmethod
    def _check_latent(latent) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim != 1 or latent.size < 2:
            raise DomainError(f"latent must be 1-d with at least 2 entries, got {latent.shape}")
        if not np.all(np.isfinite(latent)):
            raise DomainError("latent contains non-finite values")
        return latent

    def generate(self, latent: np.ndarray, seed: int) -> RgbdPatch:
        """Deterministic patch for (latent, seed); depth spans [0, 1]."""
        latent = self._check_latent(latent)
        rgb, depth = self._render_region(latent, seed, 0, 0,
                                         self.patch_size, self.patch_size)
        return RgbdPatch(rgb=rgb, depth=depth)

    def inpaint(self, patch: RgbdPatch, mask: np.ndarray, seed: int,
                latent: np.ndarray | None = None,
                content_origin: tuple[int, int] = (0, 0)) -> RgbdPatch:
        """Fill unknown (mask False) pixels; known pixels are copied bit-exactly.

        ``content_origin`` gives the content-frame coordinates of canvas
        pixel (0, 0) so fills can stay coherent with neighboring windows of
        the same (latent, seed) content.
        """
        mask = validate_mask(mask, patch)
        if mask.all():
            return patch.copy()
        if not mask.any():
            raise DomainError("inpaint needs at least one known pixel; use generate instead")

        oy, ox = content_origin
        if latent is None:
            content_latent = np.zeros(2)
            band = None  # blend over the whole unknown region
        else:
            content_latent = self._check_latent(latent)
            band = self.blend_bandwidth
        base_rgb, base_depth = self._render_region(content_latent, seed, oy, ox,
                                                   patch.height, patch.width)

        channels = [base_rgb[:, :, 0], base_rgb[:, :, 1], base_rgb[:, :, 2], base_depth]
        targets = [patch.rgb[:, :, 0], patch.rgb[:, :, 1], patch.rgb[:, :, 2], patch.depth]
        corrections = _harmonic_corrections(mask, channels, targets, band)

        out_rgb = patch.rgb.copy()
        out_depth = patch.depth.copy()
        unknown = ~mask
        for i, (base, corr) in enumerate(zip(channels, corrections)):
            filled = np.clip(base + corr, 0.0, 1.0)
            if i < 3:
                out_rgb[:, :, i][unknown] = filled[unknown]
            else:
                out_depth[unknown] = filled[unknown]
        return RgbdPatch(rgb=out_rgb, depth=out_depth)


_NEIGHBOR_SHIFTS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _harmonic_corrections(mask: np.ndarray, bases: list[np.ndarray],
                          targets: list[np.ndarray],
                          band: int | None) -> list[np.ndarray]:
    """Solve the discrete Laplace equation for the blend correction h.

    Domain: all unknown pixels, or (band mode) unknown pixels within
    ``band`` of a known pixel, with h = 0 Dirichlet at the band's inner
    edge.  Known neighbors impose h = target - base; canvas borders are
    natural (zero-flux).  One factorization serves all channels.
    """
    height, width = mask.shape
    unknown = ~mask
    if band is not None:
        dist = ndimage.distance_transform_edt(unknown)
        domain = unknown & (dist <= band)
    else:
        domain = unknown
    n = int(domain.sum())
    if n == 0:
        return [np.zeros_like(mask, dtype=np.float64) for _ in bases]

    index = np.full(mask.shape, -1, dtype=np.int64)
    index[domain] = np.arange(n)
    dom_r, dom_c = np.nonzero(domain)

    diag = np.zeros(n)
    off_rows: list[np.ndarray] = []
    off_cols: list[np.ndarray] = []
    rhs = np.zeros((n, len(bases)))
    residuals = [np.where(mask, t - b, 0.0) for b, t in zip(bases, targets)]

    for dr, dc in _NEIGHBOR_SHIFTS:
        nr = dom_r + dr
        nc = dom_c + dc
        in_canvas = (nr >= 0) & (nr < height) & (nc >= 0) & (nc < width)
        rows_i = index[dom_r[in_canvas], dom_c[in_canvas]]
        nbr_r, nbr_c = nr[in_canvas], nc[in_canvas]
        nbr_domain = domain[nbr_r, nbr_c]
        nbr_known = mask[nbr_r, nbr_c]
        # every in-canvas neighbor that is domain, known, or inner-edge
        # Dirichlet contributes to the diagonal; out-of-canvas neighbors are
        # dropped (natural boundary)
        np.add.at(diag, rows_i, 1.0)
        off_rows.append(rows_i[nbr_domain])
        off_cols.append(index[nbr_r[nbr_domain], nbr_c[nbr_domain]])
        for k, res in enumerate(residuals):
            np.add.at(rhs[:, k], rows_i[nbr_known], res[nbr_r[nbr_known], nbr_c[nbr_known]])

    rows = np.concatenate([np.arange(n)] + off_rows)
    cols = np.concatenate([np.arange(n)] + off_cols)
    vals = np.concatenate([diag, -np.ones(sum(len(r) for r in off_rows))])
    matrix = sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    solver = splu(matrix)

    out = []
    for k in range(len(bases)):
        h = np.zeros(mask.shape)
        h[domain] = solver.solve(rhs[:, k])
        out.append(h)
    return out


# --- patch I/O ---------------------------------------------------------------

def _quantize(values: np.ndarray, levels: int) -> np.ndarray:
    # round half up so the byte layout is platform-fixed
    return np.floor(values * levels + 0.5).astype(np.uint16 if levels > 255 else np.uint8)


def save_patch(patch: RgbdPatch, prefix) -> tuple[str, str]:
    """Write ``{prefix}_rgb.png`` (8-bit RGB) and ``{prefix}_depth.png``
    (16-bit grayscale); returns the two paths."""
    rgb_path = f"{prefix}_rgb.png"
    depth_path = f"{prefix}_depth.png"
    Image.fromarray(_quantize(patch.rgb, 255)).save(rgb_path)
    depth16 = _quantize(patch.depth, 65535)
    Image.fromarray(depth16).save(depth_path)
    return rgb_path, depth_path


def load_patch(prefix) -> RgbdPatch:
    """Read a patch pair written by :func:`save_patch`."""
    rgb = np.asarray(Image.open(f"{prefix}_rgb.png"), dtype=np.float64) / 255.0
    depth = np.asarray(Image.open(f"{prefix}_depth.png"), dtype=np.float64) / 65535.0
    return RgbdPatch(rgb=rgb, depth=depth)
