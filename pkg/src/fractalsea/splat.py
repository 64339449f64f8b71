"""Gaussian-splat scene: frozen-position cloud, compositing renderer, and
score-distillation appearance refinement.

Rendering follows front-to-back alpha compositing: per pixel, Gaussians are
taken in view-depth order and composited as

    C = sum_i c_i a'_i prod_{j<i} (1 - a'_j) + background * prod_j (1 - a'_j)

with effective opacity a'_i = a_i * exp(-0.5 d^T S^-1 d) from the projected
2D covariance S (clamped by +0.3 px^2 on the diagonal, footprint truncated
at 3 sigma).  Depth ordering is a global view-space sort per frame with
ties broken by stable index; this approximates exact per-ray ordering,
which is adequate for near-planar terrain viewed from above.

Refinement optimizes opacity and color only (positions stay frozen) by
plain gradient descent on the score-distillation signal
w(t) * (predicted_noise - added_noise) backpropagated through the
compositing equation; the residual is treated as constant with respect to
the scene parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError, ValidationError
from .rng import derive_seed
from .terrain import PointCloud

# --- squash helpers -----------------------------------------------------------

def sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def raw_from_unit(x: np.ndarray) -> np.ndarray:
    """Inverse sigmoid; 0 and 1 map to -inf/+inf so they are representable
    exactly after the squash."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.where(x <= 0.0, -np.inf,
                        np.where(x >= 1.0, np.inf, np.log(x / (1.0 - x))))


# --- scene types ---------------------------------------------------------------

@dataclass
class GaussianCloud:
    """Struct-of-arrays Gaussian set; positions are frozen in this artifact."""

    positions: np.ndarray    # (N, 3)
    scales: np.ndarray       # (N, 3) positive
    rotations: np.ndarray    # (N, 4) unit quaternions (w, x, y, z)
    opacity_raw: np.ndarray  # (N,) unconstrained; opacity = sigmoid
    color_raw: np.ndarray    # (N, 3) unconstrained; color = sigmoid
    positions_frozen: bool = True

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.opacity_raw = np.asarray(self.opacity_raw, dtype=np.float64)
        self.color_raw = np.asarray(self.color_raw, dtype=np.float64)
        n = self.positions.shape[0]
        if self.positions.shape != (n, 3) or self.scales.shape != (n, 3) \
                or self.rotations.shape != (n, 4) or self.opacity_raw.shape != (n,) \
                or self.color_raw.shape != (n, 3):
            raise DomainError("inconsistent gaussian array shapes")
        if not np.all(np.isfinite(self.positions)):
            raise DomainError("positions contain non-finite values")
        if np.any(self.scales <= 0) or not np.all(np.isfinite(self.scales)):
            raise DomainError("scales must be positive and finite")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DomainError("rotations must be unit quaternions (within 1e-9)")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_raw)

    @property
    def colors(self) -> np.ndarray:
        return sigmoid(self.color_raw)

    def covariances(self) -> np.ndarray:
        """Sigma = R diag(scale^2) R^T, symmetric positive definite."""
        rot = _quat_to_matrix(self.rotations)
        scaled = rot * (self.scales**2)[:, None, :]
        return scaled @ np.transpose(rot, (0, 2, 1))

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(positions=self.positions.copy(), scales=self.scales.copy(),
                             rotations=self.rotations.copy(),
                             opacity_raw=self.opacity_raw.copy(),
                             color_raw=self.color_raw.copy(),
                             positions_frozen=self.positions_frozen)


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=1),
    ], axis=1)


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def init_from_pointcloud(cloud: PointCloud, init_scale: float | None = None,
                         init_opacity: float = 0.8) -> GaussianCloud:
    """One isotropic Gaussian per point, position frozen at the point.

    Default scale is the mean nearest-neighbor distance over the cloud
    (1.0 for a single point).
    """
    n = len(cloud)
    if n == 0:
        raise DomainError("cannot initialize gaussians from an empty point cloud")
    if init_scale is None:
        if n == 1:
            init_scale = 1.0
        else:
            tree = cKDTree(cloud.positions)
            dists, _ = tree.query(cloud.positions, k=2)
            init_scale = float(np.mean(dists[:, 1]))
    if init_scale <= 0:
        raise DomainError(f"init_scale must be positive, got {init_scale}")
    return GaussianCloud(
        positions=cloud.positions.copy(),
        scales=np.full((n, 3), init_scale),
        rotations=np.tile(IDENTITY_QUAT, (n, 1)),
        opacity_raw=np.full(n, float(raw_from_unit(init_opacity))),
        color_raw=raw_from_unit(cloud.colors),
    )


# --- camera --------------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    """Orthographic or pinhole camera; x_cam = R @ (p - position).

    For orthographic cameras fx/fy are pixels per world unit; for pinhole
    they are focal lengths in pixels.  Depth is camera-space z (smaller is
    closer); pinhole cameras only see z > 0.
    """

    kind: str  # "orthographic" | "pinhole"
    rotation: np.ndarray  # (3, 3) world-to-camera
    position: np.ndarray  # (3,)
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.kind not in ("orthographic", "pinhole"):
            raise DomainError(f"camera kind must be orthographic or pinhole, got {self.kind!r}")
        rot = np.asarray(self.rotation, dtype=np.float64)
        pos = np.asarray(self.position, dtype=np.float64)
        if rot.shape != (3, 3) or pos.shape != (3,):
            raise DomainError("camera rotation must be (3,3) and position (3,)")
        if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-9 or np.linalg.det(rot) < 0:
            raise DomainError("camera rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "position", pos)
        if self.width < 1 or self.height < 1:
            raise DomainError("camera image dims must be positive")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rotation": self.rotation.tolist(),
                "position": self.position.tolist(), "width": self.width,
                "height": self.height, "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy}

    @staticmethod
    def from_dict(data: dict) -> "Camera":
        try:
            return Camera(kind=data["kind"], rotation=np.array(data["rotation"]),
                          position=np.array(data["position"]), width=int(data["width"]),
                          height=int(data["height"]), fx=float(data["fx"]),
                          fy=float(data["fy"]), cx=float(data["cx"]), cy=float(data["cy"]))
        except KeyError as exc:
            raise ValidationError(f"camera dict missing key {exc}") from exc


# rotation by pi about the x axis: look straight down at the z=const plane
TOP_DOWN_ROTATION = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def top_down_camera(positions: np.ndarray, width: int, height: int,
                    standoff: float = 1.0) -> Camera:
    """Orthographic camera looking straight down, framing the given points
    so x spans columns and y spans rows."""
    positions = np.asarray(positions, dtype=np.float64)
    x0, y0, _ = positions.min(axis=0)
    x1, y1, z1 = positions.max(axis=0)
    fx = (width - 1) / (x1 - x0) if x1 > x0 else 1.0
    fy = -(height - 1) / (y1 - y0) if y1 > y0 else -1.0
    return Camera(kind="orthographic", rotation=TOP_DOWN_ROTATION,
                  position=np.array([(x0 + x1) / 2, (y0 + y1) / 2, z1 + standoff]),
                  width=width, height=height, fx=fx, fy=fy,
                  cx=(width - 1) / 2, cy=(height - 1) / 2)


def save_camera(camera: Camera, path) -> None:
    Path(path).write_text(json.dumps(camera.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_camera(path) -> Camera:
    return Camera.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- projection + compositing ---------------------------------------------------

COV2D_CLAMP = 0.3   # pixel^2 added to the projected covariance diagonal
CUTOFF_SIGMA = 3.0  # screen-space footprint truncation


@dataclass
class _Projection:
    order: np.ndarray      # indices of visible Gaussians, front to back
    centers: np.ndarray    # (M, 2) pixel coords (x, y), ordered
    inv_cov: np.ndarray    # (M, 2, 2), ordered
    radius: np.ndarray     # (M,) pixel bbox radius, ordered


def _project(cloud: GaussianCloud, camera: Camera) -> _Projection:
    rot = camera.rotation
    p_cam = (cloud.positions - camera.position) @ rot.T
    cov_cam = rot @ cloud.covariances() @ rot.T
    z = p_cam[:, 2]

    if camera.kind == "orthographic":
        visible = np.ones(len(cloud), dtype=bool)
        px = camera.fx * p_cam[:, 0] + camera.cx
        py = camera.fy * p_cam[:, 1] + camera.cy
        jac = np.zeros((len(cloud), 2, 3))
        jac[:, 0, 0] = camera.fx
        jac[:, 1, 1] = camera.fy
    else:
        visible = z > 1e-9
        zs = np.where(visible, z, 1.0)
        px = camera.fx * p_cam[:, 0] / zs + camera.cx
        py = camera.fy * p_cam[:, 1] / zs + camera.cy
        jac = np.zeros((len(cloud), 2, 3))
        jac[:, 0, 0] = camera.fx / zs
        jac[:, 0, 2] = -camera.fx * p_cam[:, 0] / zs**2
        jac[:, 1, 1] = camera.fy / zs
        jac[:, 1, 2] = -camera.fy * p_cam[:, 1] / zs**2

    cov2d = jac @ cov_cam @ np.transpose(jac, (0, 2, 1))
    cov2d[:, 0, 0] += COV2D_CLAMP
    cov2d[:, 1, 1] += COV2D_CLAMP

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = cov2d[:, 1, 1] / det
    inv[:, 1, 1] = cov2d[:, 0, 0] / det
    inv[:, 0, 1] = -cov2d[:, 0, 1] / det
    inv[:, 1, 0] = -cov2d[:, 1, 0] / det

    eig_max = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1]) + np.sqrt(
        np.maximum(0.25 * (cov2d[:, 0, 0] - cov2d[:, 1, 1])**2 + cov2d[:, 0, 1]**2, 0.0))
    radius = CUTOFF_SIGMA * np.sqrt(eig_max)

    idx = np.nonzero(visible)[0]
    # global view-depth sort, ties broken by stable original index
    order = idx[np.argsort(z[idx], kind="stable")]
    return _Projection(order=order,
                       centers=np.stack([px, py], axis=1)[order],
                       inv_cov=inv[order], radius=radius[order])


def _kernel(proj: _Projection, k: int, width: int, height: int):
    """Footprint window and Gaussian falloff for the k-th ordered Gaussian;
    returns None when the footprint misses the image."""
    cx, cy = proj.centers[k]
    r = proj.radius[k]
    x0 = max(int(np.floor(cx - r)), 0)
    x1 = min(int(np.ceil(cx + r)) + 1, width)
    y0 = max(int(np.floor(cy - r)), 0)
    y1 = min(int(np.ceil(cy + r)) + 1, height)
    if x0 >= x1 or y0 >= y1:
        return None
    xs = np.arange(x0, x1) - cx
    ys = np.arange(y0, y1) - cy
    icov = proj.inv_cov[k]
    q = (icov[0, 0] * xs[None, :]**2
         + 2.0 * icov[0, 1] * xs[None, :] * ys[:, None]
         + icov[1, 1] * ys[:, None]**2)
    falloff = np.where(q <= CUTOFF_SIGMA**2, np.exp(-0.5 * q), 0.0)
    return (slice(y0, y1), slice(x0, x1)), falloff


def composite(cloud: GaussianCloud, camera: Camera, alphas: np.ndarray,
              colors: np.ndarray, background: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Front-to-back compositing with explicit per-Gaussian alpha/color.

    Returns (image, weight_sum, transmittance); weight_sum + transmittance
    telescopes to 1 per pixel.
    """
    proj = _project(cloud, camera)
    img = np.zeros((camera.height, camera.width, 3))
    transmittance = np.ones((camera.height, camera.width))
    weight_sum = np.zeros((camera.height, camera.width))
    for k, gi in enumerate(proj.order):
        hit = _kernel(proj, k, camera.width, camera.height)
        if hit is None:
            continue
        window, falloff = hit
        a = alphas[gi] * falloff
        w = a * transmittance[window]
        img[window] += w[:, :, None] * colors[gi]
        weight_sum[window] += w
        transmittance[window] *= 1.0 - a
    img += background * transmittance[:, :, None]
    return img, weight_sum, transmittance


def composite_vjp(cloud: GaussianCloud, camera: Camera, alphas: np.ndarray,
                  colors: np.ndarray, background: np.ndarray, residual: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate a per-pixel residual through the compositing equation.

    Returns (d/d alpha_i, d/d color_i) of sum(residual * image).  Uses a
    forward pass to record pre-Gaussian transmittance, then a back-to-front
    pass that reconstructs the composited-behind color, so no division by
    (1 - alpha) is needed and fully opaque Gaussians are handled exactly.
    """
    proj = _project(cloud, camera)
    transmittance = np.ones((camera.height, camera.width))
    records = []
    for k, gi in enumerate(proj.order):
        hit = _kernel(proj, k, camera.width, camera.height)
        if hit is None:
            continue
        window, falloff = hit
        records.append((gi, window, falloff, transmittance[window].copy()))
        transmittance[window] = transmittance[window] * (1.0 - alphas[gi] * falloff)

    grad_alpha = np.zeros(len(cloud))
    grad_color = np.zeros((len(cloud), 3))
    behind = np.broadcast_to(background, (camera.height, camera.width, 3)).copy()
    for gi, window, falloff, t_before in reversed(records):
        a = alphas[gi] * falloff
        res = residual[window]
        grad_color[gi] += np.einsum("yxc,yx->c", res, a * t_before)
        diff = colors[gi][None, None, :] - behind[window]
        grad_alpha[gi] += np.sum(np.sum(res * diff, axis=2) * t_before * falloff)
        behind[window] = a[:, :, None] * colors[gi] + (1.0 - a)[:, :, None] * behind[window]
    return grad_alpha, grad_color


DEFAULT_BACKGROUND = np.zeros(3)


def render(cloud: GaussianCloud, camera: Camera,
           background: np.ndarray = DEFAULT_BACKGROUND) -> np.ndarray:
    """Composited RGB image (H, W, 3)."""
    img, _, _ = composite(cloud, camera, cloud.opacities, cloud.colors,
                          np.asarray(background, dtype=np.float64))
    return img


def render_detailed(cloud: GaussianCloud, camera: Camera,
                    background: np.ndarray = DEFAULT_BACKGROUND):
    """Like :func:`render` but also returns per-pixel composited weight sum
    and residual transmittance (their sum telescopes to 1)."""
    return composite(cloud, camera, cloud.opacities, cloud.colors,
                     np.asarray(background, dtype=np.float64))


# --- score distillation ----------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion schedule; only alpha_bar is needed by the oracle math."""

    betas: np.ndarray
    alpha_bars: np.ndarray = field(default=None)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise DomainError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    def __len__(self) -> int:
        return len(self.betas)

    @staticmethod
    def linear(num_steps: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 2e-2) -> "NoiseSchedule":
        return NoiseSchedule(betas=np.linspace(beta_start, beta_end, num_steps))


class DenoiserOracle(Protocol):
    """Noise predictor driving refinement; output dims match the input."""

    schedule: NoiseSchedule

    def predict_noise(self, noisy_image: np.ndarray, t: int) -> np.ndarray: ...


@dataclass
class GroundTruthDenoiser:
    """Oracle that knows the clean target image: inverts forward noising
    exactly, so the residual vanishes when the render equals the target."""

    target: np.ndarray
    schedule: NoiseSchedule

    def predict_noise(self, noisy_image: np.ndarray, t: int) -> np.ndarray:
        abar = self.schedule.alpha_bars[t]
        return (noisy_image - np.sqrt(abar) * self.target) / np.sqrt(1.0 - abar)


@dataclass
class SdsGradient:
    opacity_raw: np.ndarray  # (N,)
    color_raw: np.ndarray    # (N, 3)
    residual: np.ndarray     # (H, W, 3) weighted noise residual
    rendered: np.ndarray     # (H, W, 3)


def sds_gradient(cloud: GaussianCloud, camera: Camera, oracle: DenoiserOracle,
                 t: int, weight_fn: Callable[[int], float] | None = None,
                 noise_seed: int = 0,
                 background: np.ndarray = DEFAULT_BACKGROUND) -> SdsGradient:
    """Score-distillation gradient over (opacity, color) parameters.

    Renders the scene, forms the noised image
    x_t = sqrt(abar_t) * render + sqrt(1 - abar_t) * eps with seeded eps,
    queries the oracle, and backpropagates w(t) * (eps_hat - eps) through
    the compositing equation.  The residual is held constant with respect
    to the scene parameters.
    """
    if not cloud.positions_frozen:
        raise DomainError("sds_gradient requires a frozen-position cloud")
    schedule = oracle.schedule
    if not 0 <= t < len(schedule):
        raise DomainError(f"timestep {t} outside schedule range [0, {len(schedule)})")
    background = np.asarray(background, dtype=np.float64)
    alphas = cloud.opacities
    colors = cloud.colors
    rendered, _, _ = composite(cloud, camera, alphas, colors, background)

    abar = schedule.alpha_bars[t]
    eps = np.random.default_rng(noise_seed).standard_normal(rendered.shape)
    x_t = np.sqrt(abar) * rendered + np.sqrt(1.0 - abar) * eps
    eps_hat = oracle.predict_noise(x_t, t)
    w = 1.0 if weight_fn is None else float(weight_fn(t))
    residual = w * (eps_hat - eps)

    grad_alpha, grad_color = composite_vjp(cloud, camera, alphas, colors,
                                           background, residual)
    with np.errstate(invalid="ignore"):
        d_alpha = np.where(np.isfinite(cloud.opacity_raw), alphas * (1.0 - alphas), 0.0)
        d_color = np.where(np.isfinite(cloud.color_raw), colors * (1.0 - colors), 0.0)
    return SdsGradient(opacity_raw=grad_alpha * d_alpha,
                       color_raw=grad_color * d_color,
                       residual=residual, rendered=rendered)


def refine(cloud: GaussianCloud, cameras: Sequence[Camera], oracle: DenoiserOracle,
           iterations: int, step_size: float, seed: int = 0,
           weight_fn: Callable[[int], float] | None = None,
           background: np.ndarray = DEFAULT_BACKGROUND
           ) -> tuple[GaussianCloud, list[float]]:
    """Plain gradient descent on opacity/color; positions are untouched.

    Per iteration the timestep is drawn uniformly from the schedule and
    cameras are cycled round-robin.  Returns the refined cloud and the
    mean-squared-residual trace.
    """
    if iterations < 0:
        raise DomainError("iterations must be >= 0")
    if not cameras:
        raise DomainError("refine needs at least one camera")
    out = cloud.copy()
    rng = np.random.default_rng(seed)
    trace: list[float] = []
    for it in range(iterations):
        camera = cameras[it % len(cameras)]
        t = int(rng.integers(len(oracle.schedule)))
        grads = sds_gradient(out, camera, oracle, t, weight_fn=weight_fn,
                             noise_seed=derive_seed(seed, it), background=background)
        out.opacity_raw = out.opacity_raw - step_size * grads.opacity_raw
        out.color_raw = out.color_raw - step_size * grads.color_raw
        trace.append(float(np.mean(grads.residual**2)))
    return out, trace


# --- serialization ----------------------------------------------------------------

_GAUSS_MAGIC = "fractalsea gaussians 1"
_GAUSS_PROPS = ("x", "y", "z", "scale_0", "scale_1", "scale_2",
                "rot_0", "rot_1", "rot_2", "rot_3", "opacity_raw",
                "red_raw", "green_raw", "blue_raw")


def save_gaussians(cloud: GaussianCloud, path) -> None:
    """ASCII PLY with extended per-vertex properties; raw (pre-squash)
    opacity and color are stored so round trips are exact."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"comment {_GAUSS_MAGIC}\n")
        fh.write(f"element vertex {len(cloud)}\n")
        for prop in _GAUSS_PROPS:
            fh.write(f"property double {prop}\n")
        fh.write("end_header\n")
        rows = np.hstack([cloud.positions, cloud.scales, cloud.rotations,
                          cloud.opacity_raw[:, None], cloud.color_raw])
        for row in rows:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_gaussians(path) -> GaussianCloud:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "ply":
        raise ValidationError(f"{path}: not a PLY file")
    count = None
    header_end = None
    for i, line in enumerate(lines):
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
        if line == "end_header":
            header_end = i
            break
    if count is None or header_end is None:
        raise ValidationError(f"{path}: malformed PLY header")
    body = lines[header_end + 1:header_end + 1 + count]
    data = np.array([[float(v) for v in row.split()] for row in body])
    if data.shape != (count, len(_GAUSS_PROPS)):
        raise ValidationError(f"{path}: expected {len(_GAUSS_PROPS)} properties per vertex")
    return GaussianCloud(positions=data[:, 0:3], scales=data[:, 3:6],
                         rotations=data[:, 6:10], opacity_raw=data[:, 10],
                         color_raw=data[:, 11:14])


def replace_cloud(cloud: GaussianCloud, **changes) -> GaussianCloud:
    return replace(cloud, **changes)
