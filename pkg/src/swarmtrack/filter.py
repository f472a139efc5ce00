"""Single-tracker particle filter: sampling, weighting, estimation, and the
per-frame CVPF / CSKPF updates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import motion
from .association import ViewFrame, appearance_factor
from .errors import AllZeroWeights, DegenerateRays, FactorizationFailure, WarmupIncomplete
from .geometry import (CameraModel, ball_radius_px, project_points, triangulate_many,
                       triangulate_views)
from .motion import ACC_IDX, POS_IDX, VEL_IDX, CsmParams, ObservationModel


@dataclass
class FilterParams:
    n_particles: int = 100
    sigma2: float = 0.09
    csm: CsmParams = field(default_factory=CsmParams)
    obs: ObservationModel = field(default_factory=lambda: ObservationModel.position(0.01))
    ball_radius: float = 0.5

    @property
    def dt(self) -> float:
        return self.csm.dt


@dataclass
class ParticleSet:
    states: np.ndarray   # (n, 9); CV particles carry zero acceleration
    weights: np.ndarray  # (n,)

    def __len__(self):
        return len(self.weights)


@dataclass
class HistoryEntry:
    """One committed frame; ``association`` holds measurement ids per view."""

    frame: int
    state: np.ndarray
    observation: Optional[np.ndarray]
    association: Optional[tuple]


@dataclass(eq=False)
class Tracker:
    id: int
    state: np.ndarray
    cov: np.ndarray
    a_bar: np.ndarray
    birth_frame: int
    rng: np.random.Generator
    warmup_remaining: int = 0
    last_assoc: list = field(default_factory=list)
    history: list = field(default_factory=list)
    active: bool = True
    # CSM filter run alongside CVPF during warm-up.
    shadow_state: Optional[np.ndarray] = None
    shadow_cov: Optional[np.ndarray] = None

    @property
    def status(self) -> str:
        return "active" if self.active else "inactive"

    @property
    def last_frame(self) -> int:
        return self.history[-1].frame if self.history else self.birth_frame

    def record(self, frame: int, state, observation, association) -> None:
        if self.history and frame <= self.history[-1].frame:
            raise ValueError("history frames must increase")
        self.history.append(HistoryEntry(frame, np.array(state, dtype=float),
                                         None if observation is None else np.array(observation),
                                         association))


@dataclass
class StepOutcome:
    lost: bool
    state: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    observation: Optional[np.ndarray] = None
    association: Optional[tuple] = None
    estimate: Optional[np.ndarray] = None
    a_bar: Optional[np.ndarray] = None


def tracker_rng(seed: int, tracker_id: int) -> np.random.Generator:
    """Independent stream per tracker, so results do not depend on step order."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(tracker_id),)))


def sample_particles_cv(mean, sigma2: float, n: int, rng: np.random.Generator) -> ParticleSet:
    """Isotropic Gaussian cloud over position and velocity.

    ``mean`` is a 9-vector; acceleration entries are zeroed.
    """
    mean = np.asarray(mean, dtype=float).copy()
    mean[ACC_IDX] = 0.0
    states = np.repeat(mean[None, :], n, axis=0)
    noise = rng.standard_normal((n, 6))
    if sigma2 > 0:
        sd = np.sqrt(sigma2)
        states[:, POS_IDX] += sd * noise[:, 0::2]
        states[:, VEL_IDX] += sd * noise[:, 1::2]
    return ParticleSet(states, np.full(n, 1.0 / n))


def sample_particles_csm(mean, P, n: int, rng: np.random.Generator) -> ParticleSet:
    """Multivariate Gaussian cloud ``N(mean, P)`` via a jittered Cholesky factor."""
    mean = np.asarray(mean, dtype=float)
    P = np.asarray(P, dtype=float)
    noise = rng.standard_normal((n, 9))
    tr = float(np.trace(P))
    if tr == 0.0 and not np.any(P):
        return ParticleSet(np.repeat(mean[None, :], n, axis=0), np.full(n, 1.0 / n))
    eps = 1e-9 * tr / 9.0
    try:
        L = np.linalg.cholesky(P + eps * np.eye(9))
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailure("covariance is not positive definite") from exc
    if not np.all(np.isfinite(L)):
        raise FactorizationFailure("covariance factor is not finite")
    return ParticleSet(mean + noise @ L.T, np.full(n, 1.0 / n))


def _appearance(pair_groups, blob_idx, vf: ViewFrame, prevs, v: int) -> np.ndarray:
    cache = {}
    out = np.ones(len(blob_idx))
    for i, (g, k) in enumerate(zip(pair_groups.tolist(), blob_idx.tolist())):
        if (g, k) not in cache:
            prev = prevs[g][v] if prevs[g] else None
            cache[g, k] = appearance_factor(vf.measurements[k], prev)
        out[i] = cache[g, k]
    return out


def score_positions(positions, views: Sequence[ViewFrame], cameras: Sequence[CameraModel],
                    prevs=None, radius: float = 0.5, groups=None):
    """Credibility of the best candidate association for many 3D positions.

    The best candidate is found view by view: credibility is a product of
    per-view factors that increase with similarity, so the best tuple is made
    of the per-view best measurements (ties go to the smallest index).

    Args:
        positions: ``(n, 3)`` points.
        prevs: Per group, the previous association as a list of measurements
            (one per view) or an empty list.
        groups: ``(n,)`` group index of each point; all zero if omitted.

    Returns:
        ``(weights (n,), blobs (n, V))``. A weight is zero when some view has
        no overlapping measurement; ``blobs`` is -1 where a view has none.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n = len(positions)
    if groups is None:
        groups = np.zeros(n, dtype=np.int64)
    ok = np.ones(n, bool)
    log_w = np.zeros(n)
    blobs = np.full((n, len(views)), -1, dtype=np.int64)
    for v, (vf, cam) in enumerate(zip(views, cameras)):
        uv, depth = project_points(cam, positions)
        idx = np.nonzero(depth > 0)[0]
        di, bi, tau = vf.disc_pairs(uv[idx], ball_radius_px(cam, depth[idx], radius))
        di = idx[di]
        if vf.has_patches and prevs:
            tau = np.clip(tau * _appearance(groups[di], bi, vf, prevs, v), 0.0, 1.0)
        order = np.lexsort((bi, -tau, di))
        d_sorted = di[order]
        first = np.ones(len(order), bool)
        first[1:] = d_sorted[1:] != d_sorted[:-1]
        best = order[first]
        has = np.zeros(n, bool)
        has[di[best]] = True
        ok &= has
        best_tau = np.zeros(n)
        best_tau[di[best]] = tau[best]
        log_w += best_tau - 1.0
        blobs[di[best], v] = bi[best]
    return np.where(ok, np.exp(log_w), 0.0), blobs


def weigh_particles(ps: ParticleSet, views: Sequence[ViewFrame], cameras: Sequence[CameraModel],
                    prev_assoc=None, radius: float = 0.5) -> ParticleSet:
    """Weight each particle by the credibility of its best candidate association.

    Weights are left unnormalized so an all-zero result stays detectable.
    """
    w, _ = score_positions(ps.states[:, POS_IDX], views, cameras, [prev_assoc or []], radius)
    return ParticleSet(ps.states, w)


def estimate_state(ps: ParticleSet) -> np.ndarray:
    """Weighted particle mean with weights normalized to sum to one."""
    total = float(np.sum(ps.weights))
    if not total > 0:
        raise AllZeroWeights("every particle has zero weight")
    return (ps.weights / total) @ ps.states


def best_association(position, views, cameras, prev_assoc=None, radius: float = 0.5):
    """Most credible candidate association for one 3D position, or ``None``."""
    w, blobs = score_positions(np.asarray(position, dtype=float)[None, :3], views, cameras,
                               [prev_assoc or []], radius)
    if w[0] <= 0:
        return None
    return tuple(int(b) for b in blobs[0])


def observe(association, views, cameras) -> Optional[np.ndarray]:
    """Triangulate the observation from the associated blob centroids."""
    pix = [vf.measurements[k].centroid for k, vf in zip(association, views)]
    try:
        y, _ = triangulate_views(cameras, pix)
    except DegenerateRays:
        return None
    return y


@dataclass
class Proposal:
    """Particles drawn for one step, before weighting."""

    kind: str  # "cvpf", "cskpf" or "warmup"
    particles: ParticleSet
    P_pred: Optional[np.ndarray] = None


def propose(tr: Tracker, params: FilterParams, method: str) -> Proposal:
    """Predict and sample the particle cloud of one tracker.

    With ``method="cskpf"`` a tracker still warming up gets a CVPF proposal.
    """
    if method == "cvpf" or tr.warmup_remaining > 0:
        pred = tr.state.copy()
        pred[ACC_IDX] = 0.0
        pred[POS_IDX] += params.dt * pred[VEL_IDX]
        ps = sample_particles_cv(pred, params.sigma2, params.n_particles, tr.rng)
        return Proposal("cvpf" if method == "cvpf" else "warmup", ps)
    x_pred, P_pred = motion.predict_csm(tr.state, tr.cov, params.csm, tr.a_bar)
    ps = sample_particles_csm(x_pred, P_pred, params.n_particles, tr.rng)
    return Proposal("cskpf", ps, P_pred)


def conclude(tr: Tracker, prop: Proposal, assoc, y, params: FilterParams) -> StepOutcome:
    """Turn weighted particles, the chosen association and its triangulated
    observation ``y`` (``None`` if degenerate) into an outcome."""
    ps = prop.particles
    if assoc is None or not np.any(ps.weights > 0):
        return StepOutcome(lost=True)
    xhat = estimate_state(ps)
    if prop.kind == "cskpf":
        if y is None:
            x, P = xhat, prop.P_pred
        else:
            x, P = motion.kalman_correct(xhat, prop.P_pred, y, params.obs)
        a_bar = motion.clamp_mean_acceleration(x[ACC_IDX], params.csm)
        return StepOutcome(False, x, P, y, assoc, estimate=xhat, a_bar=a_bar)
    out = StepOutcome(False, xhat, tr.cov, y, assoc, estimate=xhat, a_bar=tr.a_bar)
    if prop.kind == "warmup":
        # CSM filter fed by the CVPF observation; it only learns the mean
        # acceleration and covariance the tracker will start CSKPF from
        s, P = motion.predict_csm(tr.shadow_state, tr.shadow_cov, params.csm, tr.a_bar)
        if y is not None:
            s, P = motion.kalman_correct(s, P, y, params.obs)
        tr.shadow_state, tr.shadow_cov = s, P
        out.a_bar = motion.clamp_mean_acceleration(s[ACC_IDX], params.csm)
    return out


def _associate(ps: ParticleSet, xhat, views, cameras, prev, radius):
    assoc = best_association(xhat[POS_IDX], views, cameras, prev, radius)
    if assoc is None:
        # The weighted mean may fall between blobs; use the heaviest particle.
        i = int(np.argmax(ps.weights))
        assoc = best_association(ps.states[i, POS_IDX], views, cameras, prev, radius)
    return assoc


def _step(tr, views, cameras, params, method) -> StepOutcome:
    prop = propose(tr, params, method)
    prop.particles = weigh_particles(prop.particles, views, cameras, tr.last_assoc,
                                     params.ball_radius)
    if not np.any(prop.particles.weights > 0):
        return StepOutcome(lost=True)
    xhat = estimate_state(prop.particles)
    assoc = _associate(prop.particles, xhat, views, cameras, tr.last_assoc, params.ball_radius)
    return conclude(tr, prop, assoc, observe(assoc, views, cameras), params)


def step_cvpf(tr: Tracker, views: Sequence[ViewFrame], cameras: Sequence[CameraModel],
              params: FilterParams) -> StepOutcome:
    """One constant-velocity particle filter step."""
    return _step(tr, views, cameras, params, "cvpf")


def step_cskpf(tr: Tracker, views: Sequence[ViewFrame], cameras: Sequence[CameraModel],
               params: FilterParams) -> StepOutcome:
    """One CSM Kalman particle filter step.

    Raises:
        WarmupIncomplete: if the tracker is still in its warm-up period.
    """
    if tr.warmup_remaining > 0:
        raise WarmupIncomplete(f"tracker {tr.id} has {tr.warmup_remaining} warm-up steps left")
    return _step(tr, views, cameras, params, "cskpf")


def step_warmup(tr: Tracker, views, cameras, params: FilterParams) -> StepOutcome:
    """CVPF step whose observation also drives the tracker's CSM filter."""
    if tr.warmup_remaining <= 0:
        raise ValueError("tracker is not warming up")
    return _step(tr, views, cameras, params, "cskpf")


def step_batch(trackers: Sequence[Tracker], views, cameras, params: FilterParams,
               method: str) -> list[StepOutcome]:
    """Step several trackers on the same frame.

    Equivalent to stepping them one by one (each tracker owns its random
    stream), but particles of all trackers are scored together.
    """
    if not trackers:
        return []
    props = [propose(tr, params, method) for tr in trackers]
    prevs = [tr.last_assoc for tr in trackers]
    n = params.n_particles
    pos = np.vstack([p.particles.states[:, POS_IDX] for p in props])
    groups = np.repeat(np.arange(len(trackers)), n)
    w, _ = score_positions(pos, views, cameras, prevs, params.ball_radius, groups)
    for g, p in enumerate(props):
        p.particles = ParticleSet(p.particles.states, w[g * n:(g + 1) * n])
    alive = [g for g, p in enumerate(props) if np.any(p.particles.weights > 0)]
    assoc = [None] * len(trackers)
    if alive:
        xh = np.array([estimate_state(props[g].particles)[POS_IDX] for g in alive])
        wx, bx = score_positions(xh, views, cameras, prevs, params.ball_radius,
                                 np.array(alive))
        for row, g in enumerate(alive):
            if wx[row] > 0:
                assoc[g] = tuple(int(b) for b in bx[row])
            else:
                ps = props[g].particles
                i = int(np.argmax(ps.weights))
                assoc[g] = best_association(ps.states[i, POS_IDX], views, cameras, prevs[g],
                                            params.ball_radius)
    ys = [None] * len(trackers)
    found = [g for g, a in enumerate(assoc) if a is not None]
    if found:
        pix = [[vf.measurements[k].centroid for k, vf in zip(assoc[g], views)] for g in found]
        try:
            Y, _, ok = triangulate_many(cameras, pix)
        except DegenerateRays:
            ok = np.zeros(len(found), bool)
        for row, g in enumerate(found):
            ys[g] = Y[row] if ok[row] else None
    return [conclude(tr, p, a, y, params)
            for tr, p, a, y in zip(trackers, props, assoc, ys)]


def apply_outcome(tr: Tracker, out: StepOutcome, frame: int, views) -> None:
    """Commit a successful step to the tracker."""
    tr.state = out.state
    if out.cov is not None:
        tr.cov = out.cov
    if out.a_bar is not None:
        tr.a_bar = out.a_bar
    tr.last_assoc = [vf.measurements[k] for k, vf in zip(out.association, views)] \
        if out.association is not None else tr.last_assoc
    ids = None if out.association is None else \
        tuple(int(vf.measurements[k].id) for k, vf in zip(out.association, views))
    tr.record(frame, out.state, out.observation, ids)
