"""Multi-tracker orchestration: bootstrap, per-frame stepping, spawning,
retirement and trajectory parsing."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import filter as pf
from .association import MeasurementSet, ViewFrame
from .config import RunConfig
from .errors import DegenerateRays, InsufficientFrames
from .geometry import CameraModel, epipolar_distances, fundamental_matrix, triangulate_views
from .motion import ACC_IDX, POS_IDX, RAYLEIGH_FACTOR, VEL_IDX


@dataclass
class Trajectory:
    id: int
    frames: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    associations: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def position_at(self, frame: int) -> Optional[np.ndarray]:
        i = np.searchsorted(self.frames, frame)
        if i < len(self.frames) and self.frames[i] == frame:
            return self.positions[i]
        return None


@dataclass
class TrackSet:
    trajectories: list = field(default_factory=list)
    n_views: int = 2

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "frame", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az"]
                   + [f"view{v + 1}_blob" for v in range(self.n_views)])
        for tr in self.trajectories:
            for i, f in enumerate(tr.frames):
                assoc = tr.associations[i] if tr.associations else None
                blobs = list(assoc) if assoc is not None else [-1] * self.n_views
                row = [tr.id, int(f)]
                row += [_fmt(x) for x in tr.positions[i]]
                row += [_fmt(x) for x in tr.velocities[i]]
                row += [_fmt(x) for x in tr.accelerations[i]]
                w.writerow(row + blobs)
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def load(cls, path) -> "TrackSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        fieldnames = list(rows[0].keys()) if rows else []
        n_views = sum(1 for k in fieldnames if k.endswith("_blob"))
        return cls(trajectories_from_rows(rows, n_views), n_views or 2)


def _fmt(x: float) -> str:
    return f"{float(x):.9g}"


def trajectories_from_rows(rows, n_views: int = 0) -> list[Trajectory]:
    """Group CSV rows (dicts) by ``id`` into trajectories sorted by frame."""
    grouped: dict[int, list] = {}
    for r in rows:
        grouped.setdefault(int(r["id"]), []).append(r)
    out = []
    for tid in sorted(grouped):
        rs = sorted(grouped[tid], key=lambda r: int(r["frame"]))

        def cols(names):
            if not all(n in rs[0] for n in names):
                return np.zeros((len(rs), 3))
            return np.array([[float(r[n]) for n in names] for r in rs])

        assoc = []
        if n_views:
            for r in rs:
                a = tuple(int(r[f"view{v + 1}_blob"]) for v in range(n_views))
                assoc.append(None if all(k < 0 for k in a) else a)
        out.append(Trajectory(tid, np.array([int(r["frame"]) for r in rs]),
                              cols(["x", "y", "z"]), cols(["vx", "vy", "vz"]),
                              cols(["ax", "ay", "az"]), assoc))
    return out


@dataclass
class Seed:
    """A gated cross-frame match that can start a tracker."""

    assoc_prev: tuple
    assoc: tuple
    p_prev: np.ndarray
    p: np.ndarray
    residual: float


def reconstruct_points(views: Sequence[ViewFrame], cameras: Sequence[CameraModel],
                       epipolar_gate: float, used=None) -> list[tuple[tuple, np.ndarray, float]]:
    """Exhaustive spatial association of one frame.

    Every tuple of measurements (one per view, skipping ``used`` ones) whose
    pairwise symmetric epipolar distances are all within the gate is
    triangulated. Returns ``(index tuple, point, residual px)`` in
    lexicographic tuple order.
    """
    V = len(views)
    used = used or [set() for _ in range(V)]
    free = [[k for k in range(len(vf)) if k not in used[v]] for v, vf in enumerate(views)]
    if any(not f for f in free):
        return []
    ok = {}
    for a, b in itertools.combinations(range(V), 2):
        F = fundamental_matrix(cameras[a], cameras[b])
        d = epipolar_distances(F, views[a].centroids[free[a]], views[b].centroids[free[b]])
        ok[a, b] = {(free[a][i], free[b][j]) for i, j in zip(*np.nonzero(d <= epipolar_gate))}
    out = []

    def extend(prefix):
        v = len(prefix)
        if v == V:
            pix = [views[u].centroids[k] for u, k in enumerate(prefix)]
            try:
                X, res = triangulate_views(cameras, pix)
            except DegenerateRays:
                return
            if all(c.depth(X)[0] > 0 for c in cameras):
                out.append((tuple(prefix), X, res))
            return
        for k in free[v]:
            if all((prefix[u], k) in ok[u, v] for u in range(v)):
                extend(prefix + [k])

    extend([])
    return out


def link_frames(points_prev, points, max_disp: float) -> list[Seed]:
    """All cross-frame links within the displacement gate, shortest first."""
    seeds = []
    if not points_prev or not points:
        return seeds
    A = np.array([p for _, p, _ in points_prev])
    B = np.array([p for _, p, _ in points])
    d = np.linalg.norm(B[:, None, :] - A[None, :, :], axis=2)
    for j, i in zip(*np.nonzero(d <= max_disp)):
        seeds.append((d[j, i], points[j][0], points_prev[i][0], i, j))
    seeds.sort(key=lambda s: (s[0], s[1], s[2]))
    return [Seed(points_prev[i][0], points[j][0], points_prev[i][1], points[j][1], points[j][2])
            for _, _, _, i, j in seeds]


def select_seeds(seeds: Sequence[Seed], existing_positions, min_separation: float) -> list[Seed]:
    """Drop seeds within ``min_separation`` of an existing or accepted tracker."""
    taken = [np.asarray(p, dtype=float) for p in existing_positions]
    kept = []
    for s in seeds:
        if any(np.linalg.norm(s.p - q) <= min_separation for q in taken):
            continue
        kept.append(s)
        taken.append(s.p)
    return kept


def initial_covariance(seed: Seed, cameras, cfg: RunConfig) -> np.ndarray:
    """Diagonal starting covariance for a newly spawned tracker.

    Position variance is the observation noise plus the triangulation
    residual converted to world units at the point's depth.
    """
    px_to_world = np.mean([c.depth(seed.p)[0] / c.focal_scale for c in cameras])
    pos_var = np.broadcast_to(np.asarray(cfg.obs_var, float), (3,)) \
        + (seed.residual * px_to_world) ** 2
    vel_var = 2.0 * pos_var / cfg.dt ** 2
    acc_var = np.broadcast_to(np.asarray(cfg.a_max, float), (3,)) ** 2 * RAYLEIGH_FACTOR
    d = np.zeros(9)
    d[POS_IDX], d[VEL_IDX], d[ACC_IDX] = pos_var, vel_var, acc_var
    return np.diag(d)


def _seed_points(views_prev, views, cameras, cfg, used_prev=None, used=None):
    pts_prev = reconstruct_points(views_prev, cameras, cfg.epipolar_gate, used_prev)
    pts = reconstruct_points(views, cameras, cfg.epipolar_gate, used)
    return link_frames(pts_prev, pts, cfg.v_max * cfg.dt)


class TrackerPool:
    """Active and inactive trackers plus per-frame associated measurements."""

    def __init__(self, cameras: Sequence[CameraModel], cfg: RunConfig):
        self.cameras = list(cameras)
        self.cfg = cfg
        self.params = cfg.filter_params()
        self.active: list[pf.Tracker] = []
        self.inactive: list[pf.Tracker] = []
        self.associated: dict[int, list[set]] = {}
        self._next_id = 1

    def _new_tracker(self, seed: Seed, frame: int, views) -> pf.Tracker:
        state = np.zeros(9)
        state[POS_IDX] = seed.p
        state[VEL_IDX] = (seed.p - seed.p_prev) / self.cfg.dt
        cov = initial_covariance(seed, self.cameras, self.cfg)
        warm = self.cfg.warmup_steps if self.cfg.method == "cskpf" else 0
        tr = pf.Tracker(id=self._next_id, state=state, cov=cov, a_bar=np.zeros(3),
                        birth_frame=frame, rng=pf.tracker_rng(self.cfg.seed, self._next_id),
                        warmup_remaining=warm, shadow_state=state.copy(), shadow_cov=cov.copy())
        self._next_id += 1
        tr.last_assoc = [vf.measurements[k] for k, vf in zip(seed.assoc, views)]
        tr.record(frame, state, seed.p, tuple(int(m.id) for m in tr.last_assoc))
        return tr

    def spawn(self, views_prev, views, frame: int) -> list[pf.Tracker]:
        """Start trackers from measurements no tracker claimed at ``frame - 1``
        and ``frame``."""
        V = len(self.cameras)
        used_prev = self.associated.get(frame - 1, [set() for _ in range(V)])
        used = self.associated.setdefault(frame, [set() for _ in range(V)])
        seeds = _seed_points(views_prev, views, self.cameras, self.cfg, used_prev, used)
        existing = [t.state[POS_IDX] for t in self.active]
        chosen = select_seeds(seeds, existing, self.cfg.ball_radius)
        new = [self._new_tracker(s, frame, views) for s in chosen]
        for s in chosen:
            for v, k in enumerate(s.assoc):
                used[v].add(k)
        self.active.extend(new)
        return new

    def step(self, views, frame: int) -> None:
        """Advance every active tracker to ``frame``.

        All trackers read the same frame data; results are committed after
        every tracker has stepped.
        """
        outcomes = list(zip(self.active, pf.step_batch(self.active, views, self.cameras,
                                                       self.params, self.cfg.method)))
        used = self.associated.setdefault(frame, [set() for _ in self.cameras])
        still = []
        for tr, out in outcomes:
            if out.lost:
                tr.active = False
                self.inactive.append(tr)
                continue
            pf.apply_outcome(tr, out, frame, views)
            for v, k in enumerate(out.association):
                used[v].add(k)
            if tr.warmup_remaining > 0:
                tr.warmup_remaining -= 1
                if tr.warmup_remaining == 0:
                    tr.state, tr.cov = tr.shadow_state.copy(), tr.shadow_cov.copy()
            still.append(tr)
        self.active = still

    def trajectories(self) -> TrackSet:
        trs = sorted(self.active + self.inactive, key=lambda t: t.id)
        out = []
        for t in trs:
            if len(t.history) < self.cfg.min_track_length:
                continue
            S = np.array([h.state for h in t.history])
            out.append(Trajectory(t.id, np.array([h.frame for h in t.history]),
                                  S[:, POS_IDX], S[:, VEL_IDX], S[:, ACC_IDX],
                                  [h.association for h in t.history]))
        return TrackSet(out, len(self.cameras))


def bootstrap(views1, views2, cameras, cfg: RunConfig, frame: int = 2) -> TrackerPool:
    """Create the initial tracker pool from the first two frames."""
    pool = TrackerPool(cameras, cfg)
    pool.spawn(views1, views2, frame)
    return pool


def run(measurements: MeasurementSet, cameras: Sequence[CameraModel], cfg: RunConfig) -> TrackSet:
    """Track every object through the sequence and return its trajectories."""
    cfg.validate()
    frames = measurements.frames
    if not frames or all(len(vf) == 0 for f in frames for vf in measurements[f]):
        return TrackSet([], len(cameras))
    first, last = frames[0], frames[-1]
    if last - first + 1 < 3:
        raise InsufficientFrames(f"need at least 3 frames, got {last - first + 1}")
    pool = bootstrap(measurements[first], measurements[first + 1], cameras, cfg, first + 1)
    for t in range(first + 2, last + 1):
        views = measurements[t]
        pool.step(views, t)
        pool.spawn(measurements[t - 1], views, t)
    return pool.trajectories()
