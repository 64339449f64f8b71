"""Point-cloud fusion and export tests."""

import numpy as np
import pytest

from fractalsea.errors import DomainError
from fractalsea.latent_field import FractalParams, generate_field
from fractalsea.stitcher import StitchGeometry, build_plan, execute_plan
from fractalsea.terrain import (PointCloud, elevation, export_ply, import_ply,
                                reproject_topdown, to_pointcloud)


@pytest.fixture(scope="module")
def tmap(small_generator=None):
    from fractalsea.patchgen import ReferenceGenerator
    params = FractalParams(levels=1, scale=0.3, decay=0.5, seed=2,
                           corners=np.random.default_rng(0).normal(size=(4, 2)))
    field = generate_field(params)
    plan = build_plan("parallel", field, StitchGeometry(rows=1, cols=2, patch=16, gap=8), 4)
    return execute_plan(plan, ReferenceGenerator(patch_size=16))


class TestToPointcloud:
    def test_constant_far_depth_is_flat(self, tmap):
        flat = tmap
        import copy
        m = copy.copy(flat)
        m.depth = np.ones_like(tmap.depth)
        pc = to_pointcloud(m)
        assert np.all(pc.positions[:, 2] == 0.0)

    def test_height_scale(self, tmap):
        import copy
        m = copy.copy(tmap)
        m.depth = np.ones_like(tmap.depth)
        m.depth[0, 0] = 0.0
        pc = to_pointcloud(m, height_scale=2.0)
        assert pc.positions[0, 2] == 2.0
        assert np.all(pc.positions[1:, 2] == 0.0)

    def test_stride_counts(self, tmap):
        h, w = tmap.depth.shape
        pc = to_pointcloud(tmap, stride=2)
        assert len(pc) == ((h + 1) // 2) * ((w + 1) // 2)

    def test_stride_validation(self, tmap):
        with pytest.raises(DomainError):
            to_pointcloud(tmap, stride=0)

    def test_topdown_reprojection_is_exact(self, tmap):
        pc = to_pointcloud(tmap)
        back = reproject_topdown(pc, tmap.height, tmap.width)
        assert np.array_equal(back, tmap.rgb)


class TestElevation:
    def test_complement_of_depth(self, tmap):
        emap = elevation(tmap)
        assert np.array_equal(emap.heights, 1.0 - tmap.depth)

    def test_involution(self, tmap):
        # 1 - (1 - x) is exact only for x >= 0.5 in binary floating point;
        # below that it is correct to the last unit in place
        emap = elevation(tmap)
        assert np.max(np.abs((1.0 - emap.heights) - tmap.depth)) <= 2**-52

    def test_monotone_ramp_flips(self, tmap):
        import copy
        m = copy.copy(tmap)
        ramp = np.tile(np.linspace(0, 1, m.depth.shape[1]), (m.depth.shape[0], 1))
        m.depth = ramp
        heights = elevation(m).heights
        assert np.all(np.diff(heights, axis=1) <= 0)


class TestPly:
    def test_empty_cloud(self, tmp_path):
        pc = PointCloud(positions=np.zeros((0, 3)), colors=np.zeros((0, 3)))
        path = tmp_path / "empty.ply"
        export_ply(pc, path)
        text = path.read_text()
        assert text.startswith("ply\nformat ascii 1.0\n")
        assert "element vertex 0" in text
        assert len(import_ply(path)) == 0

    def test_single_point_layout(self, tmp_path):
        pc = PointCloud(positions=np.zeros((1, 3)), colors=np.ones((1, 3)))
        path = tmp_path / "one.ply"
        export_ply(pc, path)
        body = path.read_text().splitlines()[-1]
        assert body == "0.0 0.0 0.0 255 255 255"

    def test_round_trip_positions_bit_exact(self, tmp_path, rng):
        pc = PointCloud(positions=rng.normal(size=(100, 3)) * 1e3,
                        colors=rng.random((100, 3)))
        path = tmp_path / "cloud.ply"
        export_ply(pc, path)
        back = import_ply(path)
        assert back.positions.tobytes() == pc.positions.tobytes()
        assert np.abs(back.colors - pc.colors).max() <= 0.5 / 255 + 1e-12

    def test_color_quantization_rounds_half_up(self, tmp_path):
        pc = PointCloud(positions=np.zeros((1, 3)),
                        colors=np.array([[0.5 / 255, 1.5 / 255, 0.0]]))
        path = tmp_path / "q.ply"
        export_ply(pc, path)
        parts = path.read_text().splitlines()[-1].split()
        assert parts[3:] == ["1", "2", "0"]

    def test_io_error_has_path_context(self, tmp_path):
        pc = PointCloud(positions=np.zeros((1, 3)), colors=np.zeros((1, 3)))
        bad = tmp_path / "missing" / "cloud.ply"
        with pytest.raises(OSError, match="cloud.ply"):
            export_ply(pc, bad)


class TestPinholeUnprojection:
    def test_geometry_and_colors(self, tmap):
        from fractalsea.terrain import to_pointcloud_pinhole
        pc = to_pointcloud_pinhole(tmap, fx=20.0, fy=20.0, cx=8.0, cy=8.0,
                                   depth_near=2.0, depth_span=1.5)
        assert len(pc) == tmap.height * tmap.width
        # pixel at the principal point sits on the optical axis
        idx = 8 * tmap.width + 8
        assert pc.positions[idx, 0] == 0.0 and pc.positions[idx, 1] == 0.0
        assert pc.positions[idx, 2] == 2.0 + tmap.depth[8, 8] * 1.5
        assert np.array_equal(pc.colors[idx], tmap.rgb[8, 8])

    def test_validation(self, tmap):
        from fractalsea.terrain import to_pointcloud_pinhole
        with pytest.raises(DomainError):
            to_pointcloud_pinhole(tmap, fx=0.0, fy=1.0, cx=0, cy=0)
