"""fractalsea: fractal latent fields conditioning a pluggable patch
generator, parallelizable inpaint-stitching into a seamless RGBD map, and a
Gaussian-splat stage with compositing rendering and score-distillation
appearance refinement."""

from .embedding import (FeatureExtractor, PcaModel, ReferenceExtractor, fit_pca,
                        load_pca, project, reconstruct, save_pca)
from .errors import DomainError, FractalSeaError, PlanError, ValidationError
from .evaluation import (LatentCalibration, build_latent_recovery, diversity_index,
                         diversity_sweep, latent_mse, pattern_mse_comparison,
                         seam_comparison, seam_score, write_reports)
from .latent_field import (FractalParams, LatentField, bilinear_corners,
                           diamond_step, generate_field, load_field, sample_latent,
                           save_field, square_step)
from .patchgen import (ConditionalGenerator, ReferenceGenerator, RgbdPatch,
                       load_patch, save_patch)
from .pipeline import run_pipeline, validate_config
from .splat import (Camera, DenoiserOracle, GaussianCloud, GroundTruthDenoiser,
                    NoiseSchedule, init_from_pointcloud, load_camera, load_gaussians,
                    refine, render, render_detailed, save_camera, save_gaussians,
                    sds_gradient, top_down_camera)
from .stitcher import (StitchGeometry, StitchPlan, StitchTask, TerrainMap,
                       build_plan, execute_plan, load_plan, load_terrain_map,
                       plan_lawnmower, plan_parallel, plan_raster, save_plan,
                       save_terrain_map, topological_order)
from .terrain import (ElevationMap, PointCloud, elevation, export_ply, import_ply,
                      to_pointcloud, to_pointcloud_pinhole)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
