"""Command-line entry point wiring the toolkit into reproducible pipelines.

Exit codes: 0 success, 2 usage error, 3 validation error (bad inputs or
config), 4 runtime failure.  Every command prints a machine-readable JSON
completion record on success.
"""

from __future__ import annotations

import functools
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from .embedding import ReferenceExtractor, fit_pca, load_pca, save_pca
from .errors import DomainError, PlanError, ValidationError
from .evaluation import (build_latent_recovery, latent_mse, seam_score,
                         write_reports)
from .latent_field import FractalParams, generate_field, load_field, save_field
from .patchgen import ReferenceGenerator, load_patch, save_patch
from .pipeline import run_pipeline, validate_config
from .splat import (GroundTruthDenoiser, NoiseSchedule, load_camera,
                    load_gaussians, refine as refine_cloud, render as render_cloud,
                    save_gaussians, top_down_camera)
from .stitcher import (INPAINT_MODES, PATTERNS, StitchGeometry, build_plan,
                       execute_plan, load_plan, load_terrain_map, save_terrain_map)
from .terrain import elevation, export_ply, save_elevation, to_pointcloud

EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


def _completion(command: str, started: float, **fields) -> None:
    record = {"command": command, "status": "ok",
              "elapsed_s": round(time.time() - started, 3), **fields}
    click.echo(json.dumps(record, sort_keys=True))


def _wrap_errors(fn):
    """Map toolkit exceptions to the documented exit codes."""

    @functools.wraps(fn)
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DomainError, ValidationError, PlanError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except click.ClickException:
            raise
        except Exception as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)

    return inner


@click.group()
def main():
    """Fractal latent fields, patch stitching, and Gaussian-splat terrain."""


def _parse_corners(path: str | None, dim: int, seed: int) -> np.ndarray:
    if path is None:
        rng = np.random.default_rng(seed)
        return rng.uniform(-1.5, 1.5, size=(4, dim))
    rows = [line.split(",") for line in
            Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    corners = np.array([[float(v) for v in row] for row in rows])
    if corners.shape != (4, dim):
        raise ValidationError(f"corners file must hold 4 rows of {dim} values, "
                              f"got shape {corners.shape}")
    return corners


@main.command("field")
@click.option("--levels", type=int, required=True, help="Grid is (2^levels + 1) per side.")
@click.option("--scale", type=float, default=0.5, show_default=True)
@click.option("--decay", type=float, default=0.5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--corners", "corners_file", type=click.Path(exists=True), default=None,
              help="CSV with 4 rows (TL, TR, BL, BR) of latent values; "
                   "default draws corners from the seed.")
@click.option("--dim", type=int, default=2, show_default=True)
@click.option("--cell-extent", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@_wrap_errors
def field_cmd(levels, scale, decay, seed, corners_file, dim, cell_extent, out):
    """Generate a fractal latent field and write it as CSV."""
    started = time.time()
    params = FractalParams(levels=levels, scale=scale, decay=decay, seed=seed,
                           corners=_parse_corners(corners_file, dim, seed))
    field = generate_field(params, cell_extent=cell_extent)
    save_field(field, out)
    _completion("field", started, out=str(out), resolution=field.resolution)


@main.command("pca-fit")
@click.option("--corpus", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory of *_rgb.png / *_depth.png patch pairs.")
@click.option("--dim", type=int, default=2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Accepted for interface uniformity; the fit is deterministic.")
@click.option("--out", type=click.Path(), required=True)
@_wrap_errors
def pca_fit_cmd(corpus, dim, seed, out):
    """Fit PCA on extractor features of a patch corpus."""
    started = time.time()
    prefixes = sorted(str(p)[:-len("_rgb.png")]
                      for p in Path(corpus).glob("*_rgb.png"))
    if not prefixes:
        raise ValidationError(f"no *_rgb.png patches found in {corpus}")
    extractor = ReferenceExtractor()
    features = np.stack([extractor.extract(load_patch(p)) for p in prefixes])
    model = fit_pca(features, dim)
    save_pca(model, out)
    _completion("pca-fit", started, out=str(out), corpus_size=len(prefixes),
                rank_deficient=model.rank_deficient)


@main.command("gen")
@click.option("--latent", required=True, help="Comma-separated latent values, e.g. '0.4,-1.2'.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size", type=int, default=224, show_default=True)
@click.option("--out", "prefix", type=click.Path(), required=True,
              help="Output prefix; writes PREFIX_rgb.png and PREFIX_depth.png.")
@_wrap_errors
def gen_cmd(latent, seed, size, prefix):
    """Generate one RGBD patch from a latent vector."""
    started = time.time()
    vec = np.array([float(v) for v in latent.split(",")])
    patch = ReferenceGenerator(patch_size=size).generate(vec, seed)
    rgb_path, depth_path = save_patch(patch, prefix)
    _completion("gen", started, out=str(prefix), rgb=rgb_path, depth=depth_path)


def _parse_grid(grid: str) -> tuple[int, int]:
    try:
        rows, cols = grid.lower().split("x")
        return int(rows), int(cols)
    except ValueError as exc:
        raise ValidationError(f"grid must look like RxC, got {grid!r}") from exc


@main.command("stitch")
@click.option("--field", "field_file", type=click.Path(exists=True), required=True)
@click.option("--grid", required=True, help="Vertex-patch grid, e.g. 4x4.")
@click.option("--pattern", type=click.Choice(PATTERNS), default="parallel", show_default=True)
@click.option("--inpaint", type=click.Choice(["cond", "uncond"]), default="uncond",
              show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--patch", type=int, default=224, show_default=True)
@click.option("--gap", type=int, default=None, help="Gap width; default patch/2.")
@click.option("--margin", type=int, default=8, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@_wrap_errors
def stitch_cmd(field_file, grid, pattern, inpaint, workers, seed, patch, gap, margin, out):
    """Stitch a full map from a latent field."""
    started = time.time()
    rows, cols = _parse_grid(grid)
    field = load_field(field_file)
    geometry = StitchGeometry(rows=rows, cols=cols, patch=patch,
                              gap=patch // 2 if gap is None else gap, margin=margin)
    plan = build_plan(pattern, field, geometry, seed)
    mode = "conditional" if inpaint == "cond" else "unconditional"
    tmap = execute_plan(plan, ReferenceGenerator(patch_size=patch), mode, workers=workers)
    save_terrain_map(tmap, out)
    _completion("stitch", started, out=str(out), pattern=pattern,
                critical_path=plan.critical_path(), tasks=len(plan.tasks))


@main.command("export")
@click.option("--map", "map_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--what", type=click.Choice(["ply", "elevation"]), required=True)
@click.option("--stride", type=int, default=1, show_default=True)
@click.option("--height-scale", type=float, default=32.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Accepted for interface uniformity; the export is deterministic.")
@click.option("--out", type=click.Path(), required=True)
@_wrap_errors
def export_cmd(map_dir, what, stride, height_scale, seed, out):
    """Export a stitched map as a point cloud or elevation image."""
    started = time.time()
    tmap = load_terrain_map(map_dir)
    if what == "ply":
        export_ply(to_pointcloud(tmap, stride=stride, height_scale=height_scale), out)
    else:
        save_elevation(elevation(tmap), out)
    _completion("export", started, out=str(out), what=what)


@main.command("render")
@click.option("--cloud", "cloud_file", type=click.Path(exists=True), required=True)
@click.option("--camera", "camera_file", type=click.Path(exists=True), default=None,
              help="Camera JSON; default is a top-down framing of the cloud.")
@click.option("--width", type=int, default=256, show_default=True)
@click.option("--height", type=int, default=256, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Accepted for interface uniformity; rendering is deterministic.")
@click.option("--out", type=click.Path(), required=True)
@_wrap_errors
def render_cmd(cloud_file, camera_file, width, height, seed, out):
    """Render a Gaussian cloud to a PNG."""
    started = time.time()
    cloud = load_gaussians(cloud_file)
    camera = (load_camera(camera_file) if camera_file
              else top_down_camera(cloud.positions, width, height))
    image = render_cloud(cloud, camera)
    from PIL import Image
    png = np.floor(np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8)
    Image.fromarray(png).save(out)
    _completion("render", started, out=str(out), gaussians=len(cloud))


@main.command("refine")
@click.option("--cloud", "cloud_file", type=click.Path(exists=True), required=True)
@click.option("--target", "target_file", type=click.Path(exists=True), required=True,
              help="Target RGB PNG supervising the ground-truth denoiser.")
@click.option("--iters", type=int, default=200, show_default=True)
@click.option("--step", type=float, default=0.01, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--camera", "camera_file", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True)
@_wrap_errors
def refine_cmd(cloud_file, target_file, iters, step, seed, camera_file, out):
    """Refine cloud appearance against a target image (positions frozen)."""
    started = time.time()
    cloud = load_gaussians(cloud_file)
    from PIL import Image
    target = np.asarray(Image.open(target_file).convert("RGB"), dtype=np.float64) / 255.0
    camera = (load_camera(camera_file) if camera_file
              else top_down_camera(cloud.positions, target.shape[1], target.shape[0]))
    if (camera.height, camera.width) != target.shape[:2]:
        raise ValidationError(f"camera image size {(camera.height, camera.width)} does not "
                              f"match target {target.shape[:2]}")
    oracle = GroundTruthDenoiser(target=target, schedule=NoiseSchedule.linear())
    refined, trace = refine_cloud(cloud, [camera], oracle, iterations=iters,
                                  step_size=step, seed=seed)
    save_gaussians(refined, out)
    _completion("refine", started, out=str(out), iterations=iters,
                final_residual=trace[-1] if trace else None)


@main.command("eval")
@click.option("--map", "map_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--plan", "plan_file", type=click.Path(exists=True), default=None,
              help="Plan JSON; default MAP/plan.json.")
@click.option("--pca", "pca_file", type=click.Path(exists=True), default=None,
              help="PCA model CSV; default fits a calibrated recovery on the "
                   "reference generator.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--report", type=click.Path(), required=True)
@_wrap_errors
def eval_cmd(map_dir, plan_file, pca_file, seed, report):
    """Score a stitched map: latent recovery MSE and seam discontinuity."""
    started = time.time()
    tmap = load_terrain_map(map_dir)
    plan = load_plan(plan_file) if plan_file else tmap.plan
    extractor = ReferenceExtractor()
    if pca_file:
        pca, calibration = load_pca(pca_file), None
    else:
        generator = ReferenceGenerator(patch_size=plan.geometry.patch)
        pca, calibration = build_latent_recovery(generator, extractor,
                                                 latent_dim=plan.tasks[0].latent.shape[0],
                                                 seed=seed)
    summary = write_reports(report,
                            latent=latent_mse(tmap, plan, extractor, pca, calibration),
                            seams=seam_score(tmap),
                            critical_paths={plan.pattern: plan.critical_path()})
    _completion("eval", started, out=str(report),
                latent_mse_mean=summary.get("latent_mse_mean"),
                seam_aggregate=summary.get("seam_aggregate"))


@main.command("run")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None,
              help="Pipeline config JSON; defaults apply when omitted.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--pattern", type=click.Choice(PATTERNS), default=None,
              help="Override the config pattern.")
@click.option("--inpaint", type=click.Choice(["cond", "uncond"]), default=None,
              help="Override the config inpaint mode.")
@click.option("--workers", type=int, default=None, help="Override the config worker count.")
@click.option("--out", type=click.Path(), required=True)
@_wrap_errors
def run_cmd(config_file, seed, pattern, inpaint, workers, out):
    """Run the full pipeline (field -> stitch -> fuse -> eval)."""
    started = time.time()
    config = (json.loads(Path(config_file).read_text(encoding="utf-8"))
              if config_file else {})
    if seed is not None:
        config["seed"] = seed
    if pattern is not None:
        config["pattern"] = pattern
    if inpaint is not None:
        config["inpaint"] = "conditional" if inpaint == "cond" else "unconditional"
    if workers is not None:
        config["workers"] = workers
    validate_config(config)
    manifest = run_pipeline(config, out)
    _completion("run", started, out=str(out),
                artifacts=len(manifest["artifacts"]),
                config_sha256=manifest["config_sha256"])


if __name__ == "__main__":
    main()
