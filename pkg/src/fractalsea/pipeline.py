"""End-to-end pipeline: field -> stitch -> fuse -> (splat) -> eval.

A pipeline run is driven by a single declarative config (JSON file at the
CLI, plain dict in the API).  Validation happens before any work: unknown
keys are rejected by name, then defaults are merged.  Every run writes a
manifest (config hash, versions, seed, artifact list) that makes reruns
byte-exact except for the manifest's own "run" timing block.

Artifact layout under the output directory:

    manifest.json
    field/field.csv
    tiles/vertex_<i>_<j>_{rgb,depth}.png
    map/map_{rgb,depth}.png  map_{rgb,depth}.npy  owners.npy  seams.csv  plan.json
    map/elevation.png                      (exports: elevation)
    cloud/points.ply                       (exports: ply)
    cloud/gaussians.ply  cloud/render.png  (splat stage, optional)
    reports/latent_mse.csv  seam_score.csv  summary.json
"""

from __future__ import annotations

import copy
import hashlib
import json
import platform
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .embedding import ReferenceExtractor
from .errors import FractalSeaError, ValidationError
from .evaluation import build_latent_recovery, latent_mse, seam_score, write_reports
from .latent_field import FractalParams, generate_field, save_field
from .patchgen import ReferenceGenerator, save_patch
from .splat import init_from_pointcloud, render, save_gaussians, top_down_camera
from .stitcher import (INPAINT_MODES, PATTERNS, StitchGeometry, build_plan,
                       execute_plan, save_terrain_map)
from .terrain import elevation, export_ply, save_elevation, to_pointcloud

DEFAULT_CONFIG = {
    "seed": 0,
    "pattern": "parallel",
    "inpaint": "unconditional",
    "workers": 1,
    "generator": "reference",
    "exports": ["ply", "elevation"],
    "field": {
        "levels": 2,
        "scale": 0.5,
        "decay": 0.5,
        "dim": 2,
        "cell_extent": 1.0,
        "corners": "spread",
    },
    "grid": {"rows": 2, "cols": 2},
    "patch": {"size": 224, "gap": None, "margin": 8, "bandwidth": 8},
    "splat": {"enabled": False, "init_opacity": 0.8, "stride": 1,
              "height_scale": 32.0, "render": False},
    "eval": {"enabled": True, "calibration_samples": 48},
}

SPREAD_CORNERS = np.array([[-1.2, -1.2], [1.2, -1.2], [-1.2, 1.2], [1.2, 1.2]])


class StageError(FractalSeaError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _check_keys(raw: dict, reference: dict, path: str = "") -> None:
    for key, value in raw.items():
        if key not in reference:
            where = f"{path}.{key}" if path else key
            raise ValidationError(f"unknown config key: {where!r}")
        if isinstance(reference[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {key!r} must be a mapping")
            _check_keys(value, reference[key], f"{path}.{key}" if path else key)


def validate_config(raw: dict) -> dict:
    """Reject unknown keys, merge defaults, and type/range-check values."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a mapping")
    _check_keys(raw, DEFAULT_CONFIG)
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for key, value in raw.items():
        if isinstance(value, dict):
            cfg[key].update(value)
        else:
            cfg[key] = value

    if cfg["pattern"] not in PATTERNS:
        raise ValidationError(f"pattern must be one of {PATTERNS}, got {cfg['pattern']!r}")
    if cfg["inpaint"] not in INPAINT_MODES:
        raise ValidationError(f"inpaint must be one of {INPAINT_MODES}, got {cfg['inpaint']!r}")
    if cfg["generator"] != "reference":
        raise ValidationError(f"unknown generator {cfg['generator']!r}")
    if int(cfg["workers"]) < 1:
        raise ValidationError("workers must be >= 1")
    for export in cfg["exports"]:
        if export not in ("ply", "elevation"):
            raise ValidationError(f"unknown export {export!r}")

    field = cfg["field"]
    corners = field["corners"]
    if isinstance(corners, str):
        if corners == "spread":
            if int(field["dim"]) != 2:
                raise ValidationError("corners 'spread' requires field.dim == 2")
        elif corners != "random":
            raise ValidationError(f"corners must be 'spread', 'random', or a 4xd list, "
                                  f"got {corners!r}")
    else:
        arr = np.asarray(corners, dtype=np.float64)
        if arr.shape != (4, int(field["dim"])):
            raise ValidationError(f"corners list must be 4x{field['dim']}, got {arr.shape}")

    patch = cfg["patch"]
    if patch["gap"] is None:
        patch["gap"] = int(patch["size"]) // 2
    return cfg


def _resolve_corners(cfg: dict) -> np.ndarray:
    field = cfg["field"]
    corners = field["corners"]
    if isinstance(corners, str):
        if corners == "spread":
            return SPREAD_CORNERS.copy()
        rng = np.random.default_rng(int(cfg["seed"]))
        return rng.uniform(-1.5, 1.5, size=(4, int(field["dim"])))
    return np.asarray(corners, dtype=np.float64)


def _package_version() -> str:
    try:
        return metadata.version("fractalsea")
    except metadata.PackageNotFoundError:
        return "unknown"


def run_pipeline(config: dict, out_dir) -> dict:
    """Execute the configured pipeline; returns the manifest dict.

    On stage failure, partial artifacts stay on disk next to an
    ``error.json`` record naming the failed stage, and a StageError is
    raised.
    """
    cfg = validate_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    stage = "init"
    try:
        # field
        stage = "field"
        field_cfg = cfg["field"]
        params = FractalParams(levels=int(field_cfg["levels"]), scale=float(field_cfg["scale"]),
                               decay=float(field_cfg["decay"]), seed=int(cfg["seed"]),
                               corners=_resolve_corners(cfg))
        field = generate_field(params, cell_extent=float(field_cfg["cell_extent"]))
        (out / "field").mkdir(exist_ok=True)
        save_field(field, out / "field" / "field.csv")

        # stitch
        stage = "stitch"
        patch_cfg = cfg["patch"]
        geometry = StitchGeometry(rows=int(cfg["grid"]["rows"]), cols=int(cfg["grid"]["cols"]),
                                  patch=int(patch_cfg["size"]), gap=int(patch_cfg["gap"]),
                                  margin=int(patch_cfg["margin"]))
        generator = ReferenceGenerator(patch_size=geometry.patch,
                                       blend_bandwidth=int(patch_cfg["bandwidth"]))
        plan = build_plan(cfg["pattern"], field, geometry, int(cfg["seed"]))
        tmap = execute_plan(plan, generator, cfg["inpaint"], workers=int(cfg["workers"]))
        save_terrain_map(tmap, out / "map")
        tiles_dir = out / "tiles"
        tiles_dir.mkdir(exist_ok=True)
        for task in plan.vertex_tasks():
            i, j = task.coords
            save_patch(tmap.vertex_tile(i, j), tiles_dir / f"vertex_{i}_{j}")

        # fuse
        stage = "fuse"
        cloud_dir = out / "cloud"
        splat_cfg = cfg["splat"]
        pc = to_pointcloud(tmap, stride=int(splat_cfg["stride"]),
                           height_scale=float(splat_cfg["height_scale"]))
        if "ply" in cfg["exports"]:
            cloud_dir.mkdir(exist_ok=True)
            export_ply(pc, cloud_dir / "points.ply")
        if "elevation" in cfg["exports"]:
            save_elevation(elevation(tmap), out / "map" / "elevation.png")

        # splat (optional)
        if splat_cfg["enabled"]:
            stage = "splat"
            cloud_dir.mkdir(exist_ok=True)
            gaussians = init_from_pointcloud(pc, init_opacity=float(splat_cfg["init_opacity"]))
            save_gaussians(gaussians, cloud_dir / "gaussians.ply")
            if splat_cfg["render"]:
                camera = top_down_camera(gaussians.positions, tmap.width, tmap.height)
                image = render(gaussians, camera)
                from PIL import Image
                png = np.floor(np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8)
                Image.fromarray(png).save(cloud_dir / "render.png")

        # eval (optional)
        if cfg["eval"]["enabled"]:
            stage = "eval"
            extractor = ReferenceExtractor()
            pca, calibration = build_latent_recovery(
                generator, extractor, latent_dim=field.dim,
                n_samples=int(cfg["eval"]["calibration_samples"]), seed=int(cfg["seed"]))
            write_reports(out / "reports",
                          latent=latent_mse(tmap, plan, extractor, pca, calibration),
                          seams=seam_score(tmap),
                          critical_paths={plan.pattern: plan.critical_path()})

        stage = "manifest"
        manifest = _write_manifest(cfg, out, started)
        return manifest
    except Exception as exc:
        record = {"stage": stage, "error": str(exc), "type": type(exc).__name__}
        (out / "error.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, exc) from exc


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode("utf-8")).hexdigest()


def _write_manifest(cfg: dict, out: Path, started: float) -> dict:
    artifacts = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                       if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config": cfg,
        "config_sha256": config_digest(cfg),
        "seed": cfg["seed"],
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "fractalsea": _package_version(),
        },
        "artifacts": artifacts,
        "run": {
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "elapsed_seconds": round(time.time() - started, 3),
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest


def manifest_comparable(manifest_path) -> dict:
    """Manifest contents with the run-timing block stripped (the one part
    allowed to differ between byte-exact reruns)."""
    data = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    data.pop("run", None)
    return data


def artifact_fingerprint(out_dir) -> dict[str, str]:
    """sha256 per artifact file, with the manifest canonicalized via
    :func:`manifest_comparable`; equal fingerprints mean byte-identical
    runs up to manifest timing."""
    out = Path(out_dir)
    digest: dict[str, str] = {}
    for path in sorted(out.rglob("*")):
        if not path.is_file():
            continue
        rel = str(path.relative_to(out))
        if path.name == "manifest.json":
            blob = json.dumps(manifest_comparable(path), sort_keys=True).encode("utf-8")
        else:
            blob = path.read_bytes()
        digest[rel] = hashlib.sha256(blob).hexdigest()
    return digest
