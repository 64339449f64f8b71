"""Quantitative harness: latent-recovery MSE, seam discontinuity, critical
path, and diversity-vs-scale statistics.

Latent MSE follows the reference-latent methodology: for every vertex tile,
compare the latent that conditioned it against the latent recovered from
the tile by extractor + PCA.  A procedural generator's PCA frame is an
arbitrary affine image of the conditioning frame, so the harness supports
an explicit affine calibration fitted on an independent corpus of
conditional generates; the same calibration is applied to every pattern
being compared, keeping the comparison fair.  Raw (uncalibrated)
projection is available by passing ``calibration=None``.

The seam score baselines boundary gradients against the map's interior
gradient median so texture-rich content is not penalized: a seamless map
scores ~0.  This metric is an invention of this toolkit (the underlying
comparison is qualitative in origin).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import LUMA_WEIGHTS, FeatureExtractor, PcaModel, fit_pca, project
from .errors import DomainError
from .latent_field import FractalParams, generate_field
from .patchgen import ConditionalGenerator, ReferenceGenerator
from .rng import derive_seed
from .stitcher import (StitchGeometry, StitchPlan, TerrainMap, build_plan,
                       execute_plan)

#: published averages for a trained diffusion model evaluated with CLIP and
#: DINO embeddings; printed as context only — the procedural reference
#: generator's numbers live in a different embedding space and are not
#: comparable to these.
TRAINED_MODEL_CONTEXT = {
    "clip_mse_avg": 0.034,
    "dino_mse_avg": 3.34,
    "comparable": False,
    "note": "trained-model averages in CLIP/DINO embedding spaces; "
            "not comparable to the procedural reference generator",
}


# --- latent recovery ------------------------------------------------------------

@dataclass(frozen=True)
class LatentCalibration:
    """Affine map from PCA-projection space to the conditioning-latent frame."""

    weights: np.ndarray  # (d_proj + 1, d_latent), last row is the offset

    def apply(self, projected: np.ndarray) -> np.ndarray:
        return np.append(projected, 1.0) @ self.weights


def build_latent_recovery(generator: ConditionalGenerator,
                          extractor: FeatureExtractor,
                          latent_dim: int = 2, n_samples: int = 64,
                          seed: int = 0, latent_span: float = 2.0
                          ) -> tuple[PcaModel, LatentCalibration]:
    """Fit PCA plus affine calibration on a corpus of conditional generates.

    The corpus latents are drawn deterministically from ``seed``; patch
    seeds are derived per sample.  The returned pair recovers conditioning
    latents from tiles up to the generator's seed-noise floor.
    """
    if n_samples < latent_dim + 2:
        raise DomainError(f"need at least {latent_dim + 2} samples, got {n_samples}")
    rng = np.random.default_rng(seed)
    latents = rng.uniform(-latent_span, latent_span, size=(n_samples, latent_dim))
    features = np.stack([
        extractor.extract(generator.generate(latents[i], derive_seed(seed, "cal", i)))
        for i in range(n_samples)])
    pca = fit_pca(features, latent_dim)
    projected = np.stack([project(pca, f) for f in features])
    design = np.hstack([projected, np.ones((n_samples, 1))])
    weights, *_ = np.linalg.lstsq(design, latents, rcond=None)
    return pca, LatentCalibration(weights=weights)


@dataclass
class LatentMseReport:
    per_tile: list[dict]  # task_id, coords, mse
    mean_mse: float


def latent_mse(tmap: TerrainMap, plan: StitchPlan | None,
               extractor: FeatureExtractor, pca: PcaModel,
               calibration: LatentCalibration | None = None) -> LatentMseReport:
    """Per-vertex-tile MSE between the conditioning latent and the latent
    recovered from the generated tile."""
    plan = plan if plan is not None else tmap.plan
    rows = []
    for task in plan.vertex_tasks():
        i, j = task.coords
        tile = tmap.vertex_tile(i, j)
        predicted = project(pca, extractor.extract(tile))
        if calibration is not None:
            predicted = calibration.apply(predicted)
        reference = task.latent[:predicted.shape[0]]
        if reference.shape != predicted.shape:
            raise DomainError(
                f"latent dim mismatch: conditioning {task.latent.shape} vs "
                f"recovered {predicted.shape}")
        mse = float(np.mean((predicted - reference)**2))
        rows.append({"task_id": task.task_id, "coords": [i, j], "mse": mse})
    if not rows:
        raise DomainError("plan has no vertex tasks")
    return LatentMseReport(per_tile=rows,
                           mean_mse=float(np.mean([r["mse"] for r in rows])))


# --- seam discontinuity ----------------------------------------------------------

@dataclass
class SeamReport:
    per_seam: dict[tuple[int, int], float]  # (owner_a, owner_b) -> score
    aggregate: float
    interior_baseline: float
    empty_registry: bool = False


def seam_score(tmap: TerrainMap) -> SeamReport:
    """Squared luma jumps across task boundaries, baselined by the median
    interior neighbor-pixel squared difference; positive parts only, so a
    seamless map scores ~0."""
    if len(tmap.seams) == 0:
        warnings.warn("seam registry is empty; score is 0 by definition")
        return SeamReport(per_seam={}, aggregate=0.0,
                          interior_baseline=0.0, empty_registry=True)
    luma = tmap.rgb @ LUMA_WEIGHTS
    owner = tmap.owner

    interior = []
    same_h = owner[:, :-1] == owner[:, 1:]
    interior.append(((luma[:, :-1] - luma[:, 1:])[same_h])**2)
    same_v = owner[:-1, :] == owner[1:, :]
    interior.append(((luma[:-1, :] - luma[1:, :])[same_v])**2)
    interior = np.concatenate(interior)
    baseline = float(np.median(interior)) if interior.size else 0.0

    ra, ca, rb, cb = tmap.seams.T
    sq = (luma[ra, ca] - luma[rb, cb])**2
    positive = np.maximum(sq - baseline, 0.0)

    owners_a = owner[ra, ca]
    owners_b = owner[rb, cb]
    lo = np.minimum(owners_a, owners_b)
    hi = np.maximum(owners_a, owners_b)
    per_seam: dict[tuple[int, int], float] = {}
    for pair in np.unique(np.stack([lo, hi], axis=1), axis=0):
        sel = (lo == pair[0]) & (hi == pair[1])
        per_seam[(int(pair[0]), int(pair[1]))] = float(np.mean(positive[sel]))
    return SeamReport(per_seam=per_seam, aggregate=float(np.mean(positive)),
                      interior_baseline=baseline)


def seam_comparison(generator: ReferenceGenerator, n_pairs: int,
                    seed: int = 0, levels: int = 1) -> list[dict]:
    """Stitch random tile pairs three ways — unblended paste, unconditional
    blend, conditional blend — and score each.

    The unblended baseline is the conditional fill with a zero blend band,
    i.e. raw content pasted into the gap with no harmonization.
    """
    geometry = StitchGeometry(rows=1, cols=2, patch=generator.patch_size,
                              gap=max(generator.patch_size // 2, generator.blend_bandwidth * 2))
    naive_gen = ReferenceGenerator(patch_size=generator.patch_size, blend_bandwidth=0,
                                   octaves=generator.octaves)
    rows = []
    rng = np.random.default_rng(seed)
    for k in range(n_pairs):
        params = FractalParams(levels=levels, scale=0.0, decay=0.5,
                               seed=derive_seed(seed, k),
                               corners=rng.uniform(-2, 2, size=(4, 2)))
        field = generate_field(params)
        plan = build_plan("parallel", field, geometry, derive_seed(seed, k, 1))
        scores = {
            "naive": seam_score(execute_plan(plan, naive_gen, "conditional")).aggregate,
            "unconditional": seam_score(execute_plan(plan, generator, "unconditional")).aggregate,
            "conditional": seam_score(execute_plan(plan, generator, "conditional")).aggregate,
        }
        rows.append({"pair": k, **scores})
    return rows


# --- pattern comparison -----------------------------------------------------------

def pattern_mse_comparison(generator: ConditionalGenerator,
                           extractor: FeatureExtractor,
                           geometry: StitchGeometry,
                           field_template: FractalParams,
                           global_seeds: list[int],
                           inpaint_mode: str = "unconditional",
                           pca: PcaModel | None = None,
                           calibration: LatentCalibration | None = None,
                           patterns: tuple[str, ...] = ("raster", "lawnmower", "parallel"),
                           ) -> dict:
    """Mean latent MSE per stitch pattern, averaged over seeds.

    Each seed regenerates the latent field (field seed = derived from the
    global seed) and stitches one map per pattern under the given inpaint
    mode; every map is scored with the same recovery pipeline.
    """
    if pca is None or calibration is None:
        pca, calibration = build_latent_recovery(generator, extractor,
                                                 latent_dim=field_template.dim)
    per_pattern: dict[str, list[float]] = {p: [] for p in patterns}
    for gseed in global_seeds:
        params = FractalParams(levels=field_template.levels, scale=field_template.scale,
                               decay=field_template.decay, seed=derive_seed(gseed, "field"),
                               corners=field_template.corners)
        field = generate_field(params)
        for pattern in patterns:
            plan = build_plan(pattern, field, geometry, gseed)
            tmap = execute_plan(plan, generator, inpaint_mode)
            per_pattern[pattern].append(latent_mse(tmap, plan, extractor, pca,
                                                   calibration).mean_mse)
    return {
        "inpaint_mode": inpaint_mode,
        "seeds": list(global_seeds),
        "mean_mse": {p: float(np.mean(v)) for p, v in per_pattern.items()},
        "per_seed": {p: [float(x) for x in v] for p, v in per_pattern.items()},
        "context": dict(TRAINED_MODEL_CONTEXT),
    }


# --- diversity vs scale -----------------------------------------------------------

def diversity_index(maps_by_scale: dict[float, list[TerrainMap]],
                    extractor: FeatureExtractor, pca: PcaModel,
                    calibration: LatentCalibration | None = None
                    ) -> list[tuple[float, float]]:
    """Mean embedding distance between spatially adjacent vertex tiles,
    per noise-scale value (ascending)."""
    if len(maps_by_scale) < 2:
        raise DomainError("diversity index needs at least 2 scale values")
    out = []
    for s in sorted(maps_by_scale):
        maps = maps_by_scale[s]
        distances = []
        n_tiles = 0
        for tmap in maps:
            geo = tmap.plan.geometry
            embeddings = {}
            for i in range(geo.rows):
                for j in range(geo.cols):
                    emb = project(pca, extractor.extract(tmap.vertex_tile(i, j)))
                    if calibration is not None:
                        emb = calibration.apply(emb)
                    embeddings[(i, j)] = emb
            n_tiles += len(embeddings)
            for (i, j), emb in embeddings.items():
                for ni, nj in ((i + 1, j), (i, j + 1)):
                    if (ni, nj) in embeddings:
                        distances.append(float(np.linalg.norm(emb - embeddings[(ni, nj)])))
        if n_tiles < 10:
            raise DomainError(f"scale {s}: need >= 10 tiles, got {n_tiles}")
        if not distances:
            raise DomainError(f"scale {s}: no adjacent tile pairs")
        out.append((float(s), float(np.mean(distances))))
    return out


def diversity_sweep(generator: ConditionalGenerator, extractor: FeatureExtractor,
                    scales: list[float], seeds: list[int],
                    geometry: StitchGeometry | None = None, levels: int = 2,
                    pca: PcaModel | None = None,
                    calibration: LatentCalibration | None = None
                    ) -> list[tuple[float, float]]:
    """Generate vertex-tile grids at several noise scales (same seeds, same
    corners across scales) and return the diversity index per scale.

    Uses a gap-free layout: diversity reads vertex tiles only.
    """
    if geometry is None:
        geometry = StitchGeometry(rows=3, cols=3, patch=generator.patch_size, gap=0)
    if pca is None or calibration is None:
        pca, calibration = build_latent_recovery(generator, extractor)
    maps_by_scale: dict[float, list[TerrainMap]] = {s: [] for s in scales}
    for seed in seeds:
        # one corner latent per seed, shared by all four corners and scales
        corner = np.random.default_rng(seed).uniform(-1.5, 1.5, size=2)
        for s in scales:
            params = FractalParams(levels=levels, scale=float(s), decay=0.5,
                                   seed=derive_seed(seed, "df"),
                                   corners=np.tile(corner, (4, 1)))
            field = generate_field(params)
            plan = build_plan("parallel", field, geometry, seed)
            maps_by_scale[s].append(execute_plan(plan, generator, "unconditional"))
    return diversity_index(maps_by_scale, extractor, pca, calibration)


# --- report serialization ----------------------------------------------------------

def write_reports(report_dir, *, latent: LatentMseReport | None = None,
                  seams: SeamReport | None = None,
                  diversity: list[tuple[float, float]] | None = None,
                  critical_paths: dict[str, int] | None = None,
                  extra: dict | None = None) -> dict:
    """Write CSV tables plus a summary JSON; returns the summary dict."""
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {
        "method": "reference-latent comparison (extractor branch only; "
                  "no image-reference batch branch)",
        "context_trained_model": dict(TRAINED_MODEL_CONTEXT),
    }
    if latent is not None:
        lines = ["task_id,row,col,mse"]
        lines += [f"{r['task_id']},{r['coords'][0]},{r['coords'][1]},{r['mse']!r}"
                  for r in latent.per_tile]
        (out / "latent_mse.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        summary["latent_mse_mean"] = latent.mean_mse
    if seams is not None:
        lines = ["owner_a,owner_b,score"]
        lines += [f"{a},{b},{score!r}" for (a, b), score in sorted(seams.per_seam.items())]
        (out / "seam_score.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        summary["seam_aggregate"] = seams.aggregate
        summary["seam_interior_baseline"] = seams.interior_baseline
        summary["seam_registry_empty"] = seams.empty_registry
    if diversity is not None:
        lines = ["scale,index"]
        lines += [f"{s!r},{v!r}" for s, v in diversity]
        (out / "diversity.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        summary["diversity"] = [[s, v] for s, v in diversity]
    if critical_paths is not None:
        summary["critical_paths"] = critical_paths
    if extra:
        summary.update(extra)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return summary
