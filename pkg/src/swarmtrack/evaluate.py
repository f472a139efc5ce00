"""Trajectory quality: ground-truth matching, integrity, continuity, precision.

Track id 0 means "unmatched" in a matching series, so real track ids must be
positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NoMatches
from .manager import Trajectory

_FORBIDDEN = 1e12


@dataclass(frozen=True)
class EvalConfig:
    d0: float = 1.5
    first_frame: Optional[int] = None
    last_frame: Optional[int] = None

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError("d0 must be positive")


@dataclass
class MatchSeries:
    """``ids[i][t]`` is the track matched to ground truth ``i`` at its ``t``-th
    frame (0 if none); ``dists`` holds the matching discrepancies."""

    gt_ids: list
    frames: list = field(default_factory=list)
    ids: list = field(default_factory=list)
    dists: list = field(default_factory=list)

    @property
    def total_instants(self) -> int:
        return sum(len(k) for k in self.ids)


def discrepancy(gt: Trajectory, track: Trajectory, t: int, d0: float) -> float:
    """Distance between truth and track at frame ``t``, or ``d0`` if the track
    has no point there."""
    p = gt.position_at(t)
    q = track.position_at(t)
    if q is None:
        return float(d0)
    return float(np.linalg.norm(np.asarray(p) - q))


def _gt_frames(gt: Trajectory, cfg: EvalConfig) -> np.ndarray:
    f = gt.frames
    if cfg.first_frame is not None:
        f = f[f >= cfg.first_frame]
    if cfg.last_frame is not None:
        f = f[f <= cfg.last_frame]
    return f


def match(gts: Sequence[Trajectory], tracks: Sequence[Trajectory], cfg: EvalConfig = EvalConfig()) -> MatchSeries:
    """Per-frame one-to-one matching of ground truth to tracks.

    A match from the previous frame is kept while its distance stays within
    ``d0``. Remaining ground truth and tracks are assigned by a maximum
    cardinality, minimum total distance assignment over pairs within ``d0``.
    """
    gt_frames = [_gt_frames(g, cfg) for g in gts]
    ms = MatchSeries([g.id for g in gts], [list(f) for f in gt_frames],
                     [[0] * len(f) for f in gt_frames], [[0.0] * len(f) for f in gt_frames])
    all_frames = sorted(set(int(x) for f in gt_frames for x in f))
    # frame -> position in each gt's frame list
    where = [{int(x): k for k, x in enumerate(f)} for f in gt_frames]
    prev = {}  # gt index -> track index matched at previous frame
    for t in all_frames:
        live_g = [i for i in range(len(gts)) if t in where[i]]
        live_t = {}
        for j, tr in enumerate(tracks):
            q = tr.position_at(t)
            if q is not None:
                live_t[j] = q
        cur = {}
        for i in live_g:
            j = prev.get(i)
            if j is not None and j in live_t:
                d = float(np.linalg.norm(gts[i].position_at(t) - live_t[j]))
                if d <= cfg.d0:
                    cur[i] = (j, d)
        taken = {j for j, _ in cur.values()}
        rest_g = [i for i in live_g if i not in cur]
        rest_t = [j for j in live_t if j not in taken]
        if rest_g and rest_t:
            P = np.array([gts[i].position_at(t) for i in rest_g])
            Q = np.array([live_t[j] for j in rest_t])
            D = np.linalg.norm(P[:, None] - Q[None], axis=2)
            cost = np.where(D <= cfg.d0, D, _FORBIDDEN)
            for a, b in zip(*linear_sum_assignment(cost)):
                if D[a, b] <= cfg.d0:
                    cur[rest_g[a]] = (rest_t[b], float(D[a, b]))
        prev = {i: j for i, (j, _) in cur.items()}
        for i, (j, d) in cur.items():
            k = where[i][t]
            ms.ids[i][k] = tracks[j].id
            ms.dists[i][k] = d
    return ms


def id_switches(series: Sequence[int]) -> int:
    """Changes between distinct non-zero ids; gaps (0) are skipped."""
    last = 0
    n = 0
    for k in series:
        if k == 0:
            continue
        if last and k != last:
            n += 1
        last = k
    return n


def integrity(ms: MatchSeries) -> float:
    total = ms.total_instants
    if total == 0:
        return 0.0
    return sum(1 for ks in ms.ids for k in ks if k != 0) / total


def continuity(ms: MatchSeries) -> float:
    total = ms.total_instants
    if total == 0:
        return 1.0
    return 1.0 - sum(id_switches(ks) for ks in ms.ids) / total


def precision(ms: MatchSeries) -> float:
    """Mean discrepancy over matched instants.

    Raises:
        NoMatches: if nothing was matched.
    """
    d = [dd for ks, ds in zip(ms.ids, ms.dists) for k, dd in zip(ks, ds) if k != 0]
    if not d:
        raise NoMatches("no matched instants")
    return float(np.mean(d))


def evaluate(gts, tracks, cfg: EvalConfig = EvalConfig()) -> dict:
    """All metrics as a JSON-ready dict."""
    ms = match(gts, tracks, cfg)
    try:
        prec = precision(ms)
    except NoMatches:
        prec = None
    return {
        "integrity": integrity(ms),
        "continuity": continuity(ms),
        "precision": prec,
        "idsw_total": sum(id_switches(ks) for ks in ms.ids),
        "matched_instants": sum(1 for ks in ms.ids for k in ks if k != 0),
        "total_instants": ms.total_instants,
    }


def save_metrics(metrics: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=1, sort_keys=True)
        fh.write("\n")
