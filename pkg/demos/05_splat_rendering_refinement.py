"""Gaussian splats: frozen-position initialization, compositing rendering,
and score-distillation appearance refinement.

The renderer composites depth-sorted Gaussians front to back; per pixel the
composited weights plus the leftover transmittance telescope to one.
Refinement runs plain gradient descent on opacity and color only, driven by
a denoiser oracle; here the oracle knows the target image, which makes the
distillation residual an exact pull toward it.
"""

import pathlib

import numpy as np
from PIL import Image

from fractalsea import (FractalParams, GroundTruthDenoiser, NoiseSchedule,
                        ReferenceGenerator, StitchGeometry, build_plan,
                        execute_plan, generate_field, init_from_pointcloud,
                        refine, render, render_detailed, save_gaussians,
                        to_pointcloud, top_down_camera)

OUT = pathlib.Path(__file__).parent / "output" / "05_splats"
OUT.mkdir(parents=True, exist_ok=True)


def save_png(image, path):
    Image.fromarray(np.floor(np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8)).save(path)


field = generate_field(FractalParams(
    levels=2, scale=0.5, decay=0.5, seed=6,
    corners=np.array([[-1.2, -1.2], [1.2, -1.2], [-1.2, 1.2], [1.2, 1.2]])))
plan = build_plan("parallel", field, StitchGeometry(rows=2, cols=2, patch=48, gap=24), 13)
tmap = execute_plan(plan, ReferenceGenerator(patch_size=48))

print("== initialize one Gaussian per (strided) map pixel, positions frozen ==")
cloud = init_from_pointcloud(to_pointcloud(tmap, stride=3, height_scale=24.0))
print(f"{len(cloud)} gaussians, isotropic scale {cloud.scales[0, 0]:.2f} "
      f"(mean nearest-neighbor distance), opacity {cloud.opacities[0]:.2f}")
save_gaussians(cloud, OUT / "initial.ply")

camera = top_down_camera(cloud.positions, tmap.width, tmap.height)
image, weights, transmittance = render_detailed(cloud, camera)
save_png(image, OUT / "render_initial.png")
print(f"rendered {camera.width}x{camera.height}; conservation residual "
      f"{np.abs(weights + transmittance - 1).max():.1e}")

print("\n== refine appearance: start from gray, pull toward the map ==")
gray = cloud.copy()
gray.color_raw = np.zeros_like(gray.color_raw)
save_png(render(gray, camera), OUT / "render_gray.png")
target = tmap.rgb
oracle = GroundTruthDenoiser(target=target, schedule=NoiseSchedule.linear())
before = np.mean(np.abs(render(gray, camera) - target))
refined, trace = refine(gray, [camera], oracle, iterations=120,
                        step_size=0.02, seed=4)
after = np.mean(np.abs(render(refined, camera) - target))
save_png(render(refined, camera), OUT / "render_refined.png")
save_gaussians(refined, OUT / "refined.ply")
print(f"mean |render - target|: {before:.4f} -> {after:.4f} over 120 iterations "
      f"({len(trace)} residual samples recorded)")
print("positions untouched by refinement:",
      refined.positions.tobytes() == gray.positions.tobytes())
