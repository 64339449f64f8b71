"""Splat tests: worked compositing cases, a scalar per-pixel oracle, finite
difference gradient checks, score-distillation algebra, and refinement
contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractalsea.errors import DomainError
from fractalsea.splat import (Camera, GaussianCloud, GroundTruthDenoiser,
                              IDENTITY_QUAT, NoiseSchedule, TOP_DOWN_ROTATION,
                              composite, composite_vjp, init_from_pointcloud,
                              load_camera, load_gaussians, raw_from_unit, refine,
                              render, render_detailed, save_camera,
                              save_gaussians, sds_gradient, sigmoid,
                              top_down_camera)
from fractalsea.terrain import PointCloud

CUTOFF_SQ = 9.0
CLAMP = 0.3


def make_cloud(positions, alphas, colors, scales=0.5):
    n = len(positions)
    return GaussianCloud(
        positions=np.asarray(positions, dtype=np.float64),
        scales=np.full((n, 3), scales) if np.isscalar(scales) else np.asarray(scales),
        rotations=np.tile(IDENTITY_QUAT, (n, 1)),
        opacity_raw=raw_from_unit(np.asarray(alphas, dtype=np.float64)),
        color_raw=raw_from_unit(np.asarray(colors, dtype=np.float64)))


def random_scene(rng, n=5, size=16):
    """Random scene with distinct depths and moderate opacities."""
    z = rng.uniform(-1, 1, n)
    while np.min(np.diff(np.sort(z))) < 1e-3:
        z = rng.uniform(-1, 1, n)
    positions = np.stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), z], axis=1)
    cloud = make_cloud(positions, rng.uniform(0.15, 0.9, n), rng.uniform(0.1, 0.9, (n, 3)),
                       scales=rng.uniform(0.25, 0.7, (n, 3)))
    camera = top_down_camera(positions, size, size)
    return cloud, camera


def scalar_pixel_oracle(cloud, camera, px, py, background):
    """Independent single-pixel re-evaluation of the compositing sum with
    plain loops and dense linear algebra."""
    rot = camera.rotation
    entries = []
    for i in range(len(cloud)):
        p_cam = rot @ (cloud.positions[i] - camera.position)
        cov = rot @ cloud.covariances()[i] @ rot.T
        assert camera.kind == "orthographic"
        center = np.array([camera.fx * p_cam[0] + camera.cx,
                           camera.fy * p_cam[1] + camera.cy])
        cov2d = np.array([[camera.fx**2 * cov[0, 0], camera.fx * camera.fy * cov[0, 1]],
                          [camera.fx * camera.fy * cov[1, 0], camera.fy**2 * cov[1, 1]]])
        cov2d += CLAMP * np.eye(2)
        d = np.array([px, py]) - center
        q = d @ np.linalg.inv(cov2d) @ d
        falloff = np.exp(-0.5 * q) if q <= CUTOFF_SQ else 0.0
        entries.append((p_cam[2], i, falloff))
    entries.sort(key=lambda e: (e[0], e[1]))
    color = np.zeros(3)
    transmittance = 1.0
    for _, i, falloff in entries:
        a = sigmoid(cloud.opacity_raw[i]) * falloff
        color += sigmoid(cloud.color_raw[i]) * a * transmittance
        transmittance *= 1.0 - a
    return color + background * transmittance


class TestInit:
    def test_single_point(self):
        pc = PointCloud(positions=np.array([[1.0, 2.0, 3.0]]),
                        colors=np.array([[0.25, 0.5, 0.75]]))
        cloud = init_from_pointcloud(pc)
        assert np.array_equal(cloud.positions, pc.positions)
        assert np.allclose(cloud.colors, pc.colors, atol=1e-12)
        assert cloud.scales[0, 0] == 1.0

    def test_nearest_neighbor_scale(self):
        pc = PointCloud(positions=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
                        colors=np.zeros((2, 3)))
        cloud = init_from_pointcloud(pc)
        assert np.all(cloud.scales == 1.0)

    def test_positions_frozen_bit_equal(self, rng):
        pc = PointCloud(positions=rng.normal(size=(10, 3)), colors=rng.random((10, 3)))
        cloud = init_from_pointcloud(pc)
        assert cloud.positions.tobytes() == pc.positions.tobytes()
        assert cloud.positions_frozen

    def test_default_opacity(self, rng):
        pc = PointCloud(positions=rng.normal(size=(4, 3)), colors=rng.random((4, 3)))
        cloud = init_from_pointcloud(pc)
        assert np.allclose(cloud.opacities, 0.8, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            init_from_pointcloud(PointCloud(positions=np.zeros((0, 3)),
                                            colors=np.zeros((0, 3))))


class TestValidation:
    def test_rejects_non_unit_quaternion(self):
        with pytest.raises(DomainError):
            GaussianCloud(positions=np.zeros((1, 3)), scales=np.ones((1, 3)),
                          rotations=np.array([[1.0, 0.5, 0.0, 0.0]]),
                          opacity_raw=np.zeros(1), color_raw=np.zeros((1, 3)))

    def test_rejects_nonpositive_scales(self):
        with pytest.raises(DomainError):
            GaussianCloud(positions=np.zeros((1, 3)), scales=np.zeros((1, 3)),
                          rotations=np.array([IDENTITY_QUAT]),
                          opacity_raw=np.zeros(1), color_raw=np.zeros((1, 3)))

    def test_covariance_is_spd(self, rng):
        q = rng.normal(size=(5, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        cloud = GaussianCloud(positions=rng.normal(size=(5, 3)),
                              scales=rng.uniform(0.2, 2.0, (5, 3)), rotations=q,
                              opacity_raw=np.zeros(5), color_raw=np.zeros((5, 3)))
        for cov in cloud.covariances():
            assert np.max(np.abs(cov - cov.T)) < 1e-12
            assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_camera_rejects_skewed_rotation(self):
        with pytest.raises(DomainError):
            Camera(kind="orthographic", rotation=np.eye(3) * 1.001,
                   position=np.zeros(3), width=4, height=4, fx=1, fy=1, cx=0, cy=0)


def centered_camera(width=3, height=3):
    return Camera(kind="orthographic", rotation=TOP_DOWN_ROTATION,
                  position=np.array([0.0, 0.0, 5.0]), width=width, height=height,
                  fx=1.0, fy=-1.0, cx=(width - 1) / 2, cy=(height - 1) / 2)


class TestRender:
    def test_single_opaque_gaussian_paints_its_color(self):
        color = np.array([[0.3, 0.6, 0.9]])
        cloud = make_cloud([[0.0, 0.0, 0.0]], [1.0], color)
        img = render(cloud, centered_camera())
        assert np.allclose(img[1, 1], color[0], atol=1e-12)

    def test_two_gaussian_analytic_value(self):
        cloud = make_cloud([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]], [0.6, 1.0],
                           [[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
        img = render(cloud, centered_camera())
        assert img[1, 1, 0] == pytest.approx(0.6, abs=1e-12)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(5):
            cloud, camera = random_scene(rng)
            img = render(cloud, camera)
            for _ in range(4):
                px = int(rng.integers(camera.width))
                py = int(rng.integers(camera.height))
                oracle = scalar_pixel_oracle(cloud, camera, px, py, np.zeros(3))
                assert np.allclose(img[py, px], oracle, atol=1e-12)

    def test_conservation(self, rng):
        cloud, camera = random_scene(rng, n=8)
        _, wsum, transmittance = render_detailed(cloud, camera)
        assert np.max(np.abs(wsum + transmittance - 1.0)) <= 1e-12

    def test_occlusion_blocks_everything_behind(self):
        front = [[0.0, 0.0, 1.0]]
        cloud_a = make_cloud(front + [[0.0, 0.0, 0.0]], [1.0, 0.7],
                             [[0.2, 0.2, 0.2], [0.9, 0.9, 0.9]])
        cloud_b = make_cloud(front + [[0.0, 0.0, 0.0]], [1.0, 0.7],
                             [[0.2, 0.2, 0.2], [0.1, 0.4, 0.6]])
        cam = centered_camera()
        assert render(cloud_a, cam)[1, 1].tobytes() == render(cloud_b, cam)[1, 1].tobytes()

    def test_permutation_invariance(self, rng):
        cloud, camera = random_scene(rng, n=7)
        img = render(cloud, camera)
        perm = rng.permutation(7)
        shuffled = GaussianCloud(positions=cloud.positions[perm], scales=cloud.scales[perm],
                                 rotations=cloud.rotations[perm],
                                 opacity_raw=cloud.opacity_raw[perm],
                                 color_raw=cloud.color_raw[perm])
        assert render(shuffled, camera).tobytes() == img.tobytes()

    def test_background_fills_empty_pixels(self):
        cloud = make_cloud([[0.0, 0.0, 0.0]], [0.9], [[1.0, 0.0, 0.0]], scales=0.05)
        bg = np.array([0.1, 0.2, 0.3])
        img = render(cloud, centered_camera(9, 9), background=bg)
        assert np.allclose(img[0, 0], bg, atol=1e-12)

    def test_pinhole_projection_runs(self, rng):
        cloud, _ = random_scene(rng)
        camera = Camera(kind="pinhole", rotation=TOP_DOWN_ROTATION,
                        position=np.array([0.0, 0.0, 5.0]), width=16, height=16,
                        fx=20.0, fy=20.0, cx=7.5, cy=7.5)
        img = render(cloud, camera)
        assert img.shape == (16, 16, 3)
        assert np.all(np.isfinite(img))

    @given(st.integers(0, 10**6))
    @settings(max_examples=15, deadline=None)
    def test_conservation_property(self, seed):
        cloud, camera = random_scene(np.random.default_rng(seed), n=4, size=8)
        _, wsum, transmittance = render_detailed(cloud, camera)
        assert np.max(np.abs(wsum + transmittance - 1.0)) <= 1e-12


class TestGradients:
    def test_matches_central_differences(self, rng):
        h = 1e-5
        for _ in range(4):
            cloud, camera = random_scene(rng)
            alphas, colors = cloud.opacities, cloud.colors
            bg = np.zeros(3)
            residual = rng.normal(size=(camera.height, camera.width, 3))
            g_alpha, g_color = composite_vjp(cloud, camera, alphas, colors, bg, residual)
            for i in range(len(cloud)):
                up, down = alphas.copy(), alphas.copy()
                up[i] += h
                down[i] -= h
                fd = (np.sum(residual * composite(cloud, camera, up, colors, bg)[0])
                      - np.sum(residual * composite(cloud, camera, down, colors, bg)[0])) / (2 * h)
                assert abs(fd - g_alpha[i]) <= 1e-5
                for ch in range(3):
                    up_c, down_c = colors.copy(), colors.copy()
                    up_c[i, ch] += h
                    down_c[i, ch] -= h
                    fd = (np.sum(residual * composite(cloud, camera, alphas, up_c, bg)[0])
                          - np.sum(residual * composite(cloud, camera, alphas, down_c, bg)[0])) / (2 * h)
                    assert abs(fd - g_color[i, ch]) <= 1e-5

    def test_fully_opaque_gaussian_grads_finite(self):
        cloud = make_cloud([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]], [1.0, 0.5],
                           [[0.9, 0.9, 0.9], [0.2, 0.2, 0.2]])
        cam = centered_camera()
        g_alpha, g_color = composite_vjp(cloud, cam, cloud.opacities, cloud.colors,
                                         np.zeros(3), np.ones((3, 3, 3)))
        assert np.all(np.isfinite(g_alpha)) and np.all(np.isfinite(g_color))


class TestSds:
    @pytest.fixture()
    def scene(self, rng):
        cloud, camera = random_scene(rng, n=6)
        return cloud, camera, NoiseSchedule.linear()

    def test_fixed_point_zero_residual_and_gradient(self, scene):
        cloud, camera, schedule = scene
        oracle = GroundTruthDenoiser(target=render(cloud, camera), schedule=schedule)
        grads = sds_gradient(cloud, camera, oracle, t=250, noise_seed=5)
        assert np.abs(grads.residual).max() <= 1e-12
        assert np.abs(grads.opacity_raw).max() <= 1e-12
        assert np.abs(grads.color_raw).max() <= 1e-12

    def test_residual_independent_of_noise_and_matches_identity(self, scene):
        cloud, camera, schedule = scene
        target = np.clip(render(cloud, camera) + 0.1, 0, 1)
        oracle = GroundTruthDenoiser(target=target, schedule=schedule)
        g1 = sds_gradient(cloud, camera, oracle, t=400, noise_seed=1)
        g2 = sds_gradient(cloud, camera, oracle, t=400, noise_seed=12345)
        assert np.abs(g1.residual - g2.residual).max() <= 1e-12
        abar = schedule.alpha_bars[400]
        expected = np.sqrt(abar) / np.sqrt(1 - abar) * (g1.rendered - target)
        assert np.abs(g1.residual - expected).max() <= 1e-12

    def test_color_gradient_matches_proxy_finite_differences(self):
        """d/d(color) of the proxy 0.5 * w * k * ||render - target||^2 equals
        the distillation gradient under the ground-truth oracle."""
        cloud = make_cloud([[0.0, 0.0, 0.0]], [0.7], [[0.4, 0.5, 0.6]])
        camera = centered_camera(5, 5)
        schedule = NoiseSchedule.linear()
        t = 300
        k = np.sqrt(schedule.alpha_bars[t]) / np.sqrt(1 - schedule.alpha_bars[t])
        target = np.full((5, 5, 3), 0.25)
        oracle = GroundTruthDenoiser(target=target, schedule=schedule)
        grads = sds_gradient(cloud, camera, oracle, t=t, noise_seed=0)

        def proxy(color_raw):
            trial = GaussianCloud(positions=cloud.positions, scales=cloud.scales,
                                  rotations=cloud.rotations, opacity_raw=cloud.opacity_raw,
                                  color_raw=color_raw)
            return 0.5 * k * np.sum((render(trial, camera) - target)**2)

        h = 1e-5
        for ch in range(3):
            up, down = cloud.color_raw.copy(), cloud.color_raw.copy()
            up[0, ch] += h
            down[0, ch] -= h
            fd = (proxy(up) - proxy(down)) / (2 * h)
            assert abs(fd - grads.color_raw[0, ch]) <= 1e-4 * max(abs(fd), 1.0)

    def test_out_of_range_timestep(self, scene):
        cloud, camera, schedule = scene
        oracle = GroundTruthDenoiser(target=render(cloud, camera), schedule=schedule)
        with pytest.raises(DomainError):
            sds_gradient(cloud, camera, oracle, t=len(schedule))


class TestRefine:
    def test_zero_iterations_is_identity(self, rng):
        cloud, camera = random_scene(rng)
        oracle = GroundTruthDenoiser(target=np.zeros((16, 16, 3)),
                                     schedule=NoiseSchedule.linear())
        out, trace = refine(cloud, [camera], oracle, iterations=0, step_size=0.1)
        assert trace == []
        assert out.opacity_raw.tobytes() == cloud.opacity_raw.tobytes()
        assert out.color_raw.tobytes() == cloud.color_raw.tobytes()

    def test_positions_bit_identical_after_refine(self, rng):
        cloud, camera = random_scene(rng)
        target = np.clip(render(cloud, camera) + 0.2, 0, 1)
        oracle = GroundTruthDenoiser(target=target, schedule=NoiseSchedule.linear())
        out, _ = refine(cloud, [camera], oracle, iterations=20, step_size=0.02, seed=3)
        assert out.positions.tobytes() == cloud.positions.tobytes()
        assert out.scales.tobytes() == cloud.scales.tobytes()
        assert out.rotations.tobytes() == cloud.rotations.tobytes()

    def test_error_decreases(self, rng):
        cloud, camera = random_scene(rng, n=9, size=12)
        target = np.clip(render(cloud, camera) * 0.5 + 0.2, 0, 1)
        oracle = GroundTruthDenoiser(target=target, schedule=NoiseSchedule.linear())
        before = np.mean(np.abs(render(cloud, camera) - target))
        out, trace = refine(cloud, [camera], oracle, iterations=60, step_size=0.05, seed=1)
        after = np.mean(np.abs(render(out, camera) - target))
        assert after < before
        assert len(trace) == 60


class TestSerialization:
    def test_gaussian_round_trip(self, rng, tmp_path):
        cloud, _ = random_scene(rng)
        cloud.opacity_raw[0] = np.inf  # saturated opacity must survive
        path = tmp_path / "cloud.ply"
        save_gaussians(cloud, path)
        back = load_gaussians(path)
        for name in ("positions", "scales", "rotations", "opacity_raw", "color_raw"):
            assert getattr(back, name).tobytes() == getattr(cloud, name).tobytes()

    def test_camera_round_trip(self, tmp_path):
        cam = top_down_camera(np.array([[0.0, 0.0, 0.0], [4.0, 3.0, 1.0]]), 32, 24)
        path = tmp_path / "camera.json"
        save_camera(cam, path)
        back = load_camera(path)
        assert back.to_dict() == cam.to_dict()
