import math

import numpy as np
import pytest

from swarmtrack.errors import ConfigError, ObjectOutOfView
from swarmtrack.geometry import project_points, triangulate_views
from swarmtrack.sim import (SimConfig, _streams, default_cameras, draw_objects, generate_truth,
                            render_view, simulate, velocity)


def closed_form_velocity(t, a0, x0, g0, Ax, Ag):
    V = 6 + 2 * math.sin(2 * math.pi / 5 * t + a0)
    xi = 0.5 * Ax * (1 + math.cos(math.pi / 10 * t + x0))
    ga = 0.25 * Ag * math.cos(math.pi / 10 * t + g0)
    return V * np.array([math.cos(ga) * math.cos(xi), math.cos(ga) * math.sin(xi), math.sin(ga)])


def test_velocity_matches_closed_form():
    cfg = SimConfig(n_objects=4, seed=3)
    rng, _ = _streams(cfg.seed)
    obj = draw_objects(cfg, rng)
    for t in (0.0, 0.7, 3.3, 4.9):
        v = velocity(cfg, obj, t)
        for i in range(4):
            want = closed_form_velocity(t, obj.speed_phase[i], obj.heading_phase[i], obj.climb_phase[i],
                                  obj.heading_amp[i], obj.climb_amp[i])
            np.testing.assert_allclose(v[i], want, rtol=1e-12, atol=1e-12)


def test_speed_bounds_and_start_box():
    gt = generate_truth(SimConfig(n_objects=30, seed=1))
    speed = np.linalg.norm(gt.velocities, axis=2)
    assert speed.min() >= 4 - 1e-12 and speed.max() <= 8 + 1e-12
    assert np.all(np.abs(gt.positions[:, 0]) <= 20)
    np.testing.assert_array_equal(gt.frames, np.arange(1, 51))


def test_zero_climb_is_planar():
    gt = generate_truth(SimConfig(n_objects=5, climb_amplitude=0.0, seed=2))
    np.testing.assert_array_equal(gt.positions[:, :, 2], gt.positions[:, :1, 2].repeat(50, 1))


def test_euler_against_fine_step_oracle():
    cfg = SimConfig(n_objects=1, seed=9)
    rng, _ = _streams(cfg.seed)
    obj = draw_objects(cfg, rng)
    gt = generate_truth(cfg)
    h = cfg.dt / 10
    p = obj.start[0].copy()
    args = (obj.speed_phase[0], obj.heading_phase[0], obj.climb_phase[0],
            obj.heading_amp[0], obj.climb_amp[0])
    for k in range(490):
        p = p + h * closed_form_velocity(k * h, *args)
    # frame 50 sits at t = 4.9 s
    assert np.linalg.norm(gt.positions[0, -1] - p) < 0.5


def test_truth_is_euler_integrated():
    gt = generate_truth(SimConfig(n_objects=3, seed=4))
    np.testing.assert_allclose(np.diff(gt.positions, axis=1), 0.1 * gt.velocities[:, :-1], atol=1e-12)


def test_noiseless_centroid_near_projection():
    cfg = SimConfig(n_objects=1, pixel_noise_sigma=0.0, seed=5)
    sim = simulate(cfg)
    for t in range(50):
        for cam, vf in zip(sim.cameras, sim.measurements[t + 1]):
            uv, _ = project_points(cam, sim.truth.positions[:, t])
            assert len(vf) == 1
            assert np.all(np.abs(vf.centroids[0] - uv[0]) <= 0.5)


def test_aligned_objects_merge_in_one_view():
    cams = default_cameras(SimConfig())
    # view 1 looks along +y, so these two share its optical ray
    pts = np.array([[20.0, -10.0, 0.0], [20.0, 10.0, 0.0]])
    rng = np.random.default_rng(0)
    m1, s1 = render_view(pts, cams[0], 0.0, rng)
    m2, s2 = render_view(pts, cams[1], 0.0, rng)
    assert len(m1) == 1 and s1 == [[0, 1]]
    assert len(m2) == 2 and sorted(s2) == [[0], [1]]


def test_centroid_noise_statistics():
    cam = default_cameras(SimConfig())[0]
    rng = np.random.default_rng(17)
    p = np.array([[20.0, 0.0, 0.0]])
    uv0 = render_view(p, cam, 0.0, rng)[0][0].centroid
    errs = np.array([render_view(p, cam, 1.0, rng)[0][0].centroid - uv0 for _ in range(10_000)])
    # rigid translation snaps to the pixel grid, which adds 1/12 px^2
    std = np.sqrt(errs.var(axis=0) - 1 / 12)
    np.testing.assert_allclose(std, 1.0, rtol=0.05)


def test_blob_count_bounds_and_determinism():
    cfg = SimConfig(n_objects=40, seed=6)
    a, b = simulate(cfg), simulate(cfg)
    for f in a.measurements.frames:
        for vf, src in zip(a.measurements[f], a.sources[f]):
            assert len(vf) <= 40
            assert sorted(i for s in src for i in s) == list(range(40))
    assert a.measurements.to_json() == b.measurements.to_json()


def test_noiseless_triangulation_recovers_truth():
    cfg = SimConfig(n_objects=1, pixel_noise_sigma=0.0, seed=7)
    sim = simulate(cfg)
    cam_scale = cfg.camera_distance / cfg.focal       # world units per pixel at the box
    for t in range(0, 50, 7):
        X, _ = triangulate_views(sim.cameras, [vf.centroids[0] for vf in sim.measurements[t + 1]])
        assert np.linalg.norm(X - sim.truth.positions[0, t]) <= 2 * 0.5 * math.sqrt(3) * cam_scale * 1.2


def test_out_of_view_policy():
    cam = default_cameras(SimConfig())[0]
    far = np.array([[2000.0, 0.0, 0.0]])
    with pytest.raises(ObjectOutOfView):
        render_view(far, cam, 0.0, np.random.default_rng(0), out_of_view="error")
    ms, _ = render_view(far, cam, 0.0, np.random.default_rng(0))
    assert ms == []


@pytest.mark.parametrize("bad", [dict(duration=0), dict(n_objects=0), dict(dt=-1),
                                 dict(speed_period=0), dict(out_of_view="wrap")])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SimConfig(**bad).validate()


def test_config_from_dict_rejects_unknown():
    with pytest.raises(ConfigError):
        SimConfig.from_dict({"n_objects": 2, "colour": "red"})
    assert SimConfig.from_dict({"scene_center": [0, 0, 0]}).scene_center == (0, 0, 0)
