import itertools
import random

import numpy as np
import pytest

from swarmtrack import manager
from swarmtrack.association import MeasurementSet, ViewFrame
from swarmtrack.config import RunConfig
from swarmtrack.errors import InsufficientFrames
from swarmtrack.geometry import triangulate_views
from swarmtrack.manager import TrackSet, Trajectory, bootstrap, run
from swarmtrack.motion import POS_IDX, VEL_IDX
from swarmtrack.sim import SimConfig, default_cameras, render_frame, simulate

from test_geometry import fundamental_oracle, line_distance

CFG = RunConfig()


def frames_of(paths, cams, noise=0.0, seed=0, first=1):
    """Render per-frame object positions into a MeasurementSet. ``None`` rows
    drop an object from that frame."""
    rng = np.random.default_rng(seed)
    out = {}
    for k, pts in enumerate(paths):
        f = first + k
        pts = np.array([p for p in pts if p is not None]).reshape(-1, 3)
        if len(pts):
            ms, _ = render_frame(pts, cams, noise, rng, frame=f)
        else:
            ms = [[] for _ in cams]
        out[f] = {c.view_id: m for c, m in zip(cams, ms)}
    return MeasurementSet(out, [c.view_id for c in cams])


def enumeration_oracle(views_prev, views, cams, cfg, existing=()):
    """Every measurement tuple, every pairwise gate, every link, then greedy
    duplicate suppression in order of displacement."""
    def points(vfs):
        out = []
        for combo in itertools.product(*[range(len(vf)) for vf in vfs]):
            px = [vf.centroids[k] for k, vf in zip(combo, vfs)]
            ok = True
            for a, b in itertools.combinations(range(len(cams)), 2):
                F = fundamental_oracle(cams[a].projection, cams[b].projection)
                d = 0.5 * (line_distance(F @ np.append(px[a], 1), px[b])
                           + line_distance(F.T @ np.append(px[b], 1), px[a]))
                ok &= d <= cfg.epipolar_gate
            if ok:
                X, _ = triangulate_views(cams, px)
                out.append((combo, X))
        return out

    links = []
    for ca, Xa in points(views_prev):
        for cb, Xb in points(views):
            d = np.linalg.norm(Xb - Xa)
            if d <= cfg.v_max * cfg.dt:
                links.append((d, cb, ca, Xa, Xb))
    links.sort(key=lambda s: s[:3])
    taken = list(existing)
    chosen = []
    for d, cb, ca, Xa, Xb in links:
        if all(np.linalg.norm(Xb - q) > cfg.ball_radius for q in taken):
            chosen.append((ca, cb, Xa, Xb))
            taken.append(Xb)
    return chosen


@pytest.fixture(scope="module")
def cams():
    return default_cameras(SimConfig())


def test_bootstrap_single_noiseless_object(cams):
    p1, v = np.array([20.0, 1.0, 2.0]), np.array([3.0, -1.0, 0.5])
    ms = frames_of([[p1], [p1 + 0.1 * v]], cams)
    pool = bootstrap(ms[1], ms[2], cams, CFG)
    assert len(pool.active) == 1
    tr = pool.active[0]
    X1, _ = triangulate_views(cams, [vf.centroids[0] for vf in ms[1]])
    X2, _ = triangulate_views(cams, [vf.centroids[0] for vf in ms[2]])
    np.testing.assert_allclose(tr.state[VEL_IDX], (X2 - X1) / 0.1, atol=1e-6)
    np.testing.assert_allclose(tr.state[VEL_IDX], v, atol=0.2)   # rasterization only
    assert tr.history[0].frame == 2


def test_bootstrap_two_far_objects(cams):
    a, b = np.array([0.0, 0, 0]), np.array([30.0, 10, -5])
    ms = frames_of([[a, b], [a + 0.3, b - 0.3]], cams)
    pool = bootstrap(ms[1], ms[2], cams, CFG)
    assert len(pool.active) == 2
    pos = sorted(tuple(np.round(t.state[POS_IDX])) for t in pool.active)
    assert pos == [(0.0, 0.0, 0.0), (30.0, 10.0, -5.0)]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bootstrap_matches_enumeration(cams, seed):
    rng = np.random.default_rng(seed)
    p = np.array([20.0, 0, 0]) + rng.uniform(-20, 20, size=(10, 3))
    v = rng.normal(scale=5.0, size=(10, 3))
    ms = frames_of([p, p + 0.1 * v], cams, noise=0.5, seed=seed)
    pool = bootstrap(ms[1], ms[2], cams, CFG)
    want = enumeration_oracle(ms[1], ms[2], cams, CFG)
    got = [(t.history[0].association, t.state[POS_IDX]) for t in pool.active]
    assert len(got) == len(want) >= 5
    for (ids, X), (_, cb, _, Xb) in zip(got, want):
        assert ids == tuple(ms[2][v].measurements[k].id for v, k in enumerate(cb))
        np.testing.assert_allclose(X, Xb, atol=1e-9)


def test_spawn_nothing_when_all_claimed(cams):
    p = np.array([[20.0, 0, 0]])
    ms = frames_of([p, p + 0.1], cams)
    pool = bootstrap(ms[1], ms[2], cams, CFG)
    pool.associated[1] = [{0}, {0}]
    assert pool.spawn(ms[1], ms[2], 2) == []


def test_spawn_mixed_scene_matches_enumeration(cams):
    rng = np.random.default_rng(11)
    p = np.array([20.0, 0, 0]) + rng.uniform(-20, 20, size=(8, 3))
    ms = frames_of([p, p + 0.2, p + 0.4], cams, noise=0.5, seed=3)
    pool = bootstrap(ms[1], ms[2], cams, CFG)
    # forget half the trackers and mark the rest as associated at frame 3
    keep = pool.active[::2]
    pool.active = keep
    pool.step(ms[3], 3)
    used_prev = pool.associated[2] = [set() for _ in cams]
    for t in pool.active:
        for v, mid in enumerate(t.history[0].association):
            used_prev[v].add(mid)
    used = pool.associated[3]
    free = [ViewFrame(vf.view_id, 3, [m for k, m in enumerate(vf.measurements) if k not in used[v]])
            for v, vf in enumerate(ms[3])]
    free_prev = [ViewFrame(vf.view_id, 2, [m for k, m in enumerate(vf.measurements)
                                            if k not in used_prev[v]])
                 for v, vf in enumerate(ms[2])]
    want = enumeration_oracle(free_prev, free, cams, CFG, [t.state[POS_IDX] for t in pool.active])
    new = pool.spawn(ms[2], ms[3], 3)
    assert len(new) == len(want) > 0
    for t, (_, cb, _, Xb) in zip(new, want):
        assert t.history[0].association == tuple(free[v].measurements[k].id for v, k in enumerate(cb))
        np.testing.assert_allclose(t.state[POS_IDX], Xb, atol=1e-9)


def test_object_entering_spawns_one_tracker(cams):
    a = np.array([10.0, 0, 0])
    b = np.array([30.0, 5, 5])
    paths = [[a + 0.2 * k, b + 0.2 * k if k >= 3 else None] for k in range(7)]
    ms = frames_of(paths, cams)
    ts = run(ms, cams, RunConfig(method="cvpf"))
    starts = sorted(int(t.frames[0]) for t in ts)
    assert starts == [2, 5]


def test_empty_stream_gives_empty_trackset(cams):
    assert len(run(MeasurementSet({}, [1, 2]), cams, CFG)) == 0
    assert len(run(frames_of([[None]] * 5, cams), cams, CFG)) == 0


def test_two_frames_is_insufficient(cams):
    p = np.array([[20.0, 0, 0]])
    with pytest.raises(InsufficientFrames):
        run(frames_of([p, p], cams), cams, CFG)


@pytest.mark.parametrize("method", ["cvpf", "cskpf"])
def test_single_simulated_object_full_trajectory(method):
    sim = simulate(SimConfig(n_objects=1, seed=4))
    ts = run(sim.measurements, sim.cameras, RunConfig(method=method, seed=1))
    assert len(ts) == 1
    np.testing.assert_array_equal(ts.trajectories[0].frames, np.arange(2, 51))
    err = np.linalg.norm(ts.trajectories[0].positions - sim.truth.positions[0, 1:], axis=1)
    assert err.max() < 1.0


def test_stepping_order_does_not_matter(cams):
    rng = np.random.default_rng(5)
    p = np.array([20.0, 0, 0]) + rng.uniform(-10, 10, size=(12, 3))
    v = rng.normal(scale=4.0, size=(12, 3))
    ms = frames_of([p + 0.1 * k * v for k in range(4)], cams, noise=0.5)

    def advance(shuffle):
        pool = bootstrap(ms[1], ms[2], cams, CFG)
        pool.step(ms[3], 3)
        if shuffle:
            random.Random(0).shuffle(pool.active)
        pool.step(ms[4], 4)
        return {t.id: (t.state.tobytes(), t.history[-1].association) for t in pool.active}, \
            [sorted(s) for s in pool.associated[4]]

    assert advance(False) == advance(True)


def test_pool_invariants_on_simulated_run():
    sim = simulate(SimConfig(n_objects=15, seed=2))
    ms, cams = sim.measurements, sim.cameras
    cfg = RunConfig(seed=3)
    pool = bootstrap(ms[1], ms[2], cams, cfg)
    retired = {}
    for t in range(3, 51):
        before = {tr.id for tr in pool.inactive}
        pool.step(ms[t], t)
        for tr in pool.inactive:
            if tr.id not in before:
                retired[tr.id] = t
        pool.spawn(ms[t - 1], ms[t], t)
    ids_active = {t.id for t in pool.active}
    assert not ids_active & {t.id for t in pool.inactive}
    for tr in pool.inactive:
        assert tr.history[-1].frame == retired[tr.id] - 1
    for f, sets in pool.associated.items():
        for v, s in enumerate(sets):
            assert all(0 <= k < len(ms[f][v]) for k in s)
    for tr in pool.active + pool.inactive:
        frames = [h.frame for h in tr.history]
        assert frames == sorted(set(frames))
        for h in tr.history:
            valid = [{m.id for m in vf.measurements} for vf in ms[h.frame]]
            assert all(mid in valid[v] for v, mid in enumerate(h.association))


def test_run_is_deterministic():
    sim = simulate(SimConfig(n_objects=10, seed=8))
    a = run(sim.measurements, sim.cameras, RunConfig(seed=2)).to_csv()
    b = run(sim.measurements, sim.cameras, RunConfig(seed=2)).to_csv()
    assert a == b


def test_trackset_csv_round_trip(tmp_path):
    tr = Trajectory(3, np.array([2, 3, 5]), np.arange(9.0).reshape(3, 3) / 7,
                    -np.arange(9.0).reshape(3, 3), np.ones((3, 3)) * 1e-5,
                    [(0, 1), (2, 2), None])
    ts = TrackSet([tr], 2)
    ts.save(tmp_path / "t.csv")
    back = TrackSet.load(tmp_path / "t.csv")
    assert back.to_csv() == ts.to_csv()
    b = back.trajectories[0]
    np.testing.assert_allclose(b.positions, tr.positions, rtol=1e-8)
    assert b.associations == [(0, 1), (2, 2), None]
    assert b.position_at(4) is None
    np.testing.assert_allclose(b.position_at(5), tr.positions[2], rtol=1e-8)


def test_short_tracks_are_dropped(cams):
    p = np.array([20.0, 0, 0])
    ms = frames_of([[p], [p + 0.1], [None]], cams)
    assert len(run(ms, cams, CFG)) == 0     # birth at 2, lost at 3
