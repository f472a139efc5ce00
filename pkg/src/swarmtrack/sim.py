"""Synthetic swarm ground truth and two-camera ball rendering."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .association import Measurement, MeasurementSet
from .errors import ConfigError, ObjectOutOfView
from .geometry import CameraModel, ball_radius_px, disc_pixels, look_at_camera, project_points
from .manager import Trajectory, trajectories_from_rows


@dataclass
class SimConfig:
    """Swarm simulation settings.

    The kinematics follow a sinusoidal speed with slowly varying heading and
    climb angles. Camera settings are not part of the kinematic model: the
    default rig puts two orthogonal cameras 300 units from ``scene_center``
    so that objects drifting out of the initial box stay in view.
    """

    n_objects: int = 1
    box: float = 20.0
    speed_base: float = 6.0
    speed_amp: float = 2.0
    speed_period: float = 5.0
    angle_period: float = 20.0
    heading_scale: float = 0.5
    climb_scale: float = 0.25
    heading_amplitude: Optional[float] = None
    climb_amplitude: Optional[float] = None
    ball_radius: float = 0.5
    dt: float = 0.1
    duration: float = 5.0
    pixel_noise_sigma: float = 0.5
    seed: int = 0
    camera_distance: float = 300.0
    focal: float = 2000.0
    image_size: int = 1024
    scene_center: tuple = (20.0, 0.0, 0.0)
    out_of_view: str = "clamp"

    def validate(self) -> "SimConfig":
        if self.n_objects < 1:
            raise ConfigError("n_objects must be >= 1")
        if not self.dt > 0 or not self.duration > 0:
            raise ConfigError("dt and duration must be positive")
        if self.speed_period <= 0 or self.angle_period <= 0:
            raise ConfigError("periods must be positive")
        if self.pixel_noise_sigma < 0 or self.ball_radius < 0:
            raise ConfigError("noise sigma and ball radius must be non-negative")
        if self.out_of_view not in ("clamp", "error"):
            raise ConfigError("out_of_view must be 'clamp' or 'error'")
        return self

    @property
    def n_frames(self) -> int:
        return int(round(self.duration / self.dt))

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        d = dict(d)
        if "scene_center" in d:
            d["scene_center"] = tuple(d["scene_center"])
        return cls(**d).validate()


@dataclass
class GroundTruth:
    """Per-object positions and velocities at frames ``1..n_frames``."""

    frames: np.ndarray        # (T,)
    positions: np.ndarray     # (N, T, 3)
    velocities: np.ndarray    # (N, T, 3)

    @property
    def n_objects(self) -> int:
        return self.positions.shape[0]

    def trajectories(self) -> list[Trajectory]:
        zeros = np.zeros_like(self.positions[0])
        return [Trajectory(i + 1, self.frames.copy(), self.positions[i], self.velocities[i], zeros)
                for i in range(self.n_objects)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "frame", "x", "y", "z", "vx", "vy", "vz"])
        for i in range(self.n_objects):
            for t, f in enumerate(self.frames):
                w.writerow([i + 1, int(f)] + [f"{x:.9g}" for x in self.positions[i, t]]
                           + [f"{x:.9g}" for x in self.velocities[i, t]])
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def load_truth(path) -> list[Trajectory]:
    with open(path, newline="") as fh:
        return trajectories_from_rows(list(csv.DictReader(fh)))


@dataclass
class ObjectParams:
    """Random per-object draws."""

    start: np.ndarray     # (N, 3)
    speed_phase: np.ndarray
    heading_phase: np.ndarray
    climb_phase: np.ndarray
    heading_amp: np.ndarray
    climb_amp: np.ndarray


def draw_objects(cfg: SimConfig, rng: np.random.Generator) -> ObjectParams:
    n = cfg.n_objects
    start = rng.uniform(-cfg.box, cfg.box, size=(n, 3))
    phases = rng.uniform(0.0, 2 * math.pi, size=(3, n))
    amps = rng.uniform(-1.0, 1.0, size=(2, n))
    if cfg.heading_amplitude is not None:
        amps[0] = cfg.heading_amplitude
    if cfg.climb_amplitude is not None:
        amps[1] = cfg.climb_amplitude
    return ObjectParams(start, phases[0], phases[1], phases[2], amps[0], amps[1])


def velocity(cfg: SimConfig, obj: ObjectParams, t) -> np.ndarray:
    """Velocities of all objects at time(s) ``t``; shape ``(N, 3)`` or ``(N, len(t), 3)``."""
    t = np.asarray(t, dtype=float)
    tt = t[None, ...] if t.ndim else t
    ex = (Ellipsis,) + (None,) * t.ndim
    speed = cfg.speed_base + cfg.speed_amp * np.sin(2 * math.pi / cfg.speed_period * tt
                                                    + obj.speed_phase[ex])
    w = 2 * math.pi / cfg.angle_period
    heading = cfg.heading_scale * obj.heading_amp[ex] * (1 + np.cos(w * tt + obj.heading_phase[ex]))
    climb = cfg.climb_scale * obj.climb_amp[ex] * np.cos(w * tt + obj.climb_phase[ex])
    return np.stack([speed * np.cos(climb) * np.cos(heading),
                     speed * np.cos(climb) * np.sin(heading),
                     speed * np.sin(climb)], axis=-1)


def integrate(cfg: SimConfig, obj: ObjectParams, n_frames: int, substeps: int = 1):
    """Forward-Euler positions at frame times, optionally with finer sub-steps."""
    h = cfg.dt / substeps
    pos = obj.start.astype(float).copy()
    out_p = np.empty((cfg.n_objects, n_frames, 3))
    out_v = np.empty_like(out_p)
    for k in range(n_frames):
        t = k * cfg.dt
        out_p[:, k] = pos
        out_v[:, k] = velocity(cfg, obj, t)
        for s in range(substeps):
            pos = pos + h * velocity(cfg, obj, t + s * h)
    return out_p, out_v


def _streams(seed: int):
    truth_ss, render_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(truth_ss), np.random.default_rng(render_ss)


def generate_truth(cfg: SimConfig) -> GroundTruth:
    cfg.validate()
    rng, _ = _streams(cfg.seed)
    obj = draw_objects(cfg, rng)
    pos, vel = integrate(cfg, obj, cfg.n_frames)
    return GroundTruth(np.arange(1, cfg.n_frames + 1), pos, vel)


def default_cameras(cfg: SimConfig) -> list[CameraModel]:
    """Two orthogonal views: view 1 looks along +y, view 2 along +x."""
    c = np.asarray(cfg.scene_center, dtype=float)
    D = cfg.camera_distance
    s = cfg.image_size
    return [look_at_camera(c + [0.0, -D, 0.0], c, cfg.focal, s, s, view_id=1),
            look_at_camera(c + [-D, 0.0, 0.0], c, cfg.focal, s, s, view_id=2)]


_NEIGHBOURS = np.array([[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]])


def _touching(a: np.ndarray, b: np.ndarray) -> bool:
    """True if two pixel sets share a pixel or a 4-neighbour."""
    grown = (a[:, None, :] + _NEIGHBOURS[None]).reshape(-1, 2)
    ka = grown[:, 0] + (1 << 31) * grown[:, 1]
    kb = b[:, 0] + (1 << 31) * b[:, 1]
    return bool(np.isin(kb, ka).any())


def render_view(positions, camera: CameraModel, noise_sigma: float, rng: np.random.Generator,
                radius: float = 0.5, out_of_view: str = "clamp", frame: int = 0):
    """Render all objects into one view.

    Each object becomes a disc footprint centred on its projection shifted by
    Gaussian noise; touching footprints merge into one blob.

    Returns:
        ``(measurements, sources)`` where ``sources[k]`` lists the object
        indices merged into blob ``k``.
    """
    positions = np.atleast_2d(positions)
    n = len(positions)
    uv, depth = project_points(camera, positions)
    noise = rng.normal(0.0, 1.0, size=(n, 2)) * noise_sigma
    W, H = camera.image_width, camera.image_height
    discs, radii, centers, owners = [], [], [], []
    for i in range(n):
        inside = depth[i] > 0 and 0 <= uv[i, 0] <= W - 1 and 0 <= uv[i, 1] <= H - 1
        if not inside:
            if out_of_view == "error":
                raise ObjectOutOfView(f"object {i} outside view {camera.view_id}")
            if depth[i] <= 0:
                continue
        r = float(ball_radius_px(camera, depth[i], radius))
        c = uv[i] + noise[i]
        pix = disc_pixels(c, r, W, H)
        if len(pix):
            discs.append(pix)
            radii.append(r)
            centers.append(c)
            owners.append(i)
    m = len(discs)
    edges = []
    if m > 1:
        C = np.array(centers)
        R = np.array(radii)
        d = np.linalg.norm(C[:, None] - C[None], axis=2)
        close = d <= R[:, None] + R[None, :] + 2.0
        edges = [(a, b) for a, b in zip(*np.nonzero(np.triu(close, 1)))
                 if _touching(discs[a], discs[b])]
    rows = [a for a, _ in edges]
    cols = [b for _, b in edges]
    graph = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(m, m))
    _, labels = connected_components(graph, directed=False)
    groups: dict[int, list[int]] = {}
    for j in range(m):
        groups.setdefault(int(labels[j]), []).append(j)
    blobs = []
    for members in groups.values():
        pix = np.unique(np.vstack([discs[j] for j in members]), axis=0)
        pix = pix[np.lexsort((pix[:, 0], pix[:, 1]))]
        blobs.append((pix, sorted(owners[j] for j in members)))
    # deterministic blob order: raster order of the first pixel
    blobs.sort(key=lambda b: (b[0][0, 1], b[0][0, 0]))
    ms = [Measurement.from_pixels(camera.view_id, frame, k, pix) for k, (pix, _) in enumerate(blobs)]
    return ms, [src for _, src in blobs]


def render_frame(positions, cameras: Sequence[CameraModel], noise_sigma: float,
                 rng: np.random.Generator, radius: float = 0.5, out_of_view: str = "clamp",
                 frame: int = 0):
    """Render one frame into every view. Returns ``(per-view measurements, per-view sources)``."""
    out, src = [], []
    for cam in cameras:
        ms, s = render_view(positions, cam, noise_sigma, rng, radius, out_of_view, frame)
        out.append(ms)
        src.append(s)
    return out, src


@dataclass
class SimResult:
    config: SimConfig
    truth: GroundTruth
    cameras: list
    measurements: MeasurementSet
    sources: dict      # frame -> per-view blob source lists


def simulate(cfg: SimConfig, cameras: Optional[Sequence[CameraModel]] = None) -> SimResult:
    """Generate ground truth and render every frame."""
    cfg.validate()
    truth = generate_truth(cfg)
    cams = list(cameras) if cameras is not None else default_cameras(cfg)
    _, rng = _streams(cfg.seed)
    frames, sources = {}, {}
    for t, f in enumerate(truth.frames):
        ms, src = render_frame(truth.positions[:, t], cams, cfg.pixel_noise_sigma, rng,
                               cfg.ball_radius, cfg.out_of_view, int(f))
        frames[int(f)] = {cam.view_id: m for cam, m in zip(cams, ms)}
        sources[int(f)] = src
    mset = MeasurementSet(frames, [c.view_id for c in cams])
    return SimResult(cfg, truth, cams, mset, sources)
