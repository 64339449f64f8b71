"""Feature extraction and PCA projection for patch latents.

The extractor interface stands in for a large pretrained image encoder; the
reference implementation computes 16 deterministic image statistics chosen
so the procedural generator's controls stay linearly recoverable.  PCA
reduces extractor features to the low-dimensional latent space used to
condition generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import DomainError, ValidationError

#: luma weights (Rec. 601), used by the extractor and the seam metric
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

REFERENCE_FEATURE_DIM = 16

#: fixed normalization applied to the gradient statistics so texture
#: roughness occupies the same numeric range as the channel means (keeps
#: both generator controls visible to an unweighted PCA)
GRADIENT_SCALE = 6.0


class FeatureExtractor(Protocol):
    """Deterministic map from an RGBD patch to a fixed-size feature vector."""

    def extract(self, patch) -> np.ndarray: ...


def _grad_rms(channel: np.ndarray, axis: int) -> float:
    diffs = np.diff(channel, axis=axis)
    if diffs.size == 0:
        return 0.0
    return GRADIENT_SCALE * float(np.sqrt(np.mean(diffs**2)))


@dataclass(frozen=True)
class ReferenceExtractor:
    """16 statistics of an RGBD patch, all computed in [0, 1] space.

    Layout: per-channel means (r, g, b, depth), per-channel stds,
    gradient RMS (luma-horizontal, luma-vertical, depth-horizontal,
    depth-vertical), then 2x2 block luma means (TL, TR, BL, BR).
    """

    def extract(self, patch) -> np.ndarray:
        rgb = patch.rgb
        depth = patch.depth
        channels = [rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2], depth]
        luma = rgb @ LUMA_WEIGHTS
        h, w = depth.shape
        h2, w2 = h // 2, w // 2
        blocks = [luma[:h2, :w2], luma[:h2, w2:], luma[h2:, :w2], luma[h2:, w2:]]
        feats = (
            [float(np.mean(c)) for c in channels]
            + [float(np.std(c)) for c in channels]
            + [_grad_rms(luma, 1), _grad_rms(luma, 0), _grad_rms(depth, 1), _grad_rms(depth, 0)]
            + [float(np.mean(b)) for b in blocks]
        )
        return np.array(feats, dtype=np.float64)


@dataclass(frozen=True)
class PcaModel:
    """Mean, principal directions (rows), and their variances."""

    mean: np.ndarray                # (D,)
    components: np.ndarray          # (d, D), orthonormal rows
    explained_variance: np.ndarray  # (d,), descending
    rank_deficient: bool = field(default=False)

    @property
    def feature_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.components.shape[0]


def fit_pca(corpus: np.ndarray, d: int) -> PcaModel:
    """Fit a d-dimensional PCA to a corpus of feature vectors (rows).

    Components are the top-d eigenvectors of the sample covariance
    (1/(N-1) normalization), sign-fixed so the largest-magnitude entry of
    each component is positive.  A corpus whose covariance has rank < d
    yields zero-padded components and ``rank_deficient=True``.
    """
    corpus = np.asarray(corpus, dtype=np.float64)
    if corpus.ndim != 2:
        raise DomainError(f"corpus must be 2-d (N, D), got shape {corpus.shape}")
    n, dim = corpus.shape
    if d < 1:
        raise DomainError(f"d must be >= 1, got {d}")
    if n < d:
        raise DomainError(f"corpus size {n} is smaller than requested dimension {d}")
    if d > dim:
        raise DomainError(f"requested dimension {d} exceeds feature dimension {dim}")
    if not np.all(np.isfinite(corpus)):
        raise DomainError("corpus contains non-finite features")
    mean = corpus.mean(axis=0)
    centered = corpus - mean
    denom = max(n - 1, 1)
    cov = centered.T @ centered / denom
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    variance = np.clip(eigvals[:d], 0.0, None)
    components = eigvecs[:, :d].T.copy()
    # deterministic sign: largest-magnitude entry of each row made positive
    for row in components:
        k = int(np.argmax(np.abs(row)))
        if row[k] < 0:
            row *= -1.0

    tol = max(eigvals[0], 0.0) * dim * np.finfo(np.float64).eps
    rank = int(np.sum(eigvals > tol))
    deficient = rank < d
    if deficient:
        components[rank:] = 0.0
        variance[rank:] = 0.0
    return PcaModel(mean=mean, components=components,
                    explained_variance=variance, rank_deficient=deficient)


def project(model: PcaModel, features: np.ndarray) -> np.ndarray:
    """Latent coordinates of a feature vector: components @ (f - mean)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (model.feature_dim,):
        raise DomainError(
            f"feature dimension {features.shape} does not match model ({model.feature_dim},)")
    return model.components @ (features - model.mean)


def reconstruct(model: PcaModel, latent: np.ndarray) -> np.ndarray:
    """Lift a latent back to feature space: mean + components^T @ latent."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape != (model.latent_dim,):
        raise DomainError(
            f"latent dimension {latent.shape} does not match model ({model.latent_dim},)")
    return model.mean + model.components.T @ latent


# --- serialization -----------------------------------------------------------

_MAGIC = "fractalsea-pca"
_FORMAT_VERSION = "1"


def save_pca(model: PcaModel, path) -> None:
    """CSV layout: mean row, then one row per component, then variance row."""
    def fmt(row):
        return ",".join(repr(float(v)) for v in row)

    lines = [
        f"{_MAGIC},{_FORMAT_VERSION}",
        f"dims,{model.latent_dim},{model.feature_dim}",
        f"rank_deficient,{int(model.rank_deficient)}",
        "mean," + fmt(model.mean),
    ]
    lines.extend("component," + fmt(row) for row in model.components)
    lines.append("variance," + fmt(model.explained_variance))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_pca(path) -> PcaModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",") != [_MAGIC, _FORMAT_VERSION]:
        raise ValidationError(f"{path}: not a {_MAGIC} v{_FORMAT_VERSION} file")
    try:
        _, d_str, dim_str = lines[1].split(",")
        d, dim = int(d_str), int(dim_str)
        deficient = bool(int(lines[2].split(",")[1]))
        rows = [line.split(",") for line in lines[3:]]
        mean = np.array([float(v) for v in rows[0][1:]])
        components = np.array([[float(v) for v in row[1:]] for row in rows[1:1 + d]])
        variance = np.array([float(v) for v in rows[1 + d][1:]])
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed PCA file ({exc})") from exc
    if mean.shape != (dim,) or components.shape != (d, dim) or variance.shape != (d,):
        raise ValidationError(f"{path}: PCA file shapes disagree with header")
    return PcaModel(mean=mean, components=components,
                    explained_variance=variance, rank_deficient=deficient)
