"""Measurements, per-view similarity and candidate association groups."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch

PATCH_SIZE = 16
_KEY_STRIDE = 1 << 31


@dataclass(eq=False)
class Measurement:
    """A foreground pixel blob in one view at one frame."""

    view_id: int
    frame: int
    id: int
    pixels: np.ndarray
    centroid: np.ndarray
    patch: Optional[np.ndarray] = None

    @classmethod
    def from_pixels(cls, view_id: int, frame: int, id: int, pixels, patch=None) -> "Measurement":
        pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
        if len(pix) == 0:
            raise ValueError("measurement needs at least one pixel")
        return cls(view_id, frame, id, pix, pix.mean(axis=0), patch)

    @property
    def size(self) -> int:
        return len(self.pixels)


def _keys(pixels) -> np.ndarray:
    pix = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    return pix[:, 0] + _KEY_STRIDE * pix[:, 1]


def overlap_ratio(projected, m: Measurement) -> float:
    """Fraction of the measurement's pixels covered by a projected footprint."""
    if len(projected) == 0:
        return 0.0
    common = np.intersect1d(_keys(projected), _keys(m.pixels))
    return len(common) / len(np.unique(_keys(m.pixels)))


def ncc(a, b) -> float:
    """Zero-mean normalized cross-correlation of two equally sized patches.

    Returns 0 when either patch has zero variance.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"patch shapes differ: {a.shape} vs {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.sum(a * b) / denom, -1.0, 1.0))


def appearance_factor(m: Measurement, prev: Optional[Measurement]) -> float:
    """Non-negative NCC against the previous association, 1 without patches."""
    if prev is None or m.patch is None or prev.patch is None:
        return 1.0
    return max(ncc(m.patch, prev.patch), 0.0)


def view_similarity(state_projection, m: Measurement, prev: Optional[Measurement]) -> float:
    eta = overlap_ratio(state_projection, m)
    return float(np.clip(eta * appearance_factor(m, prev), 0.0, 1.0))


def credibility(taus: Sequence[float]) -> float:
    """Credibility of a candidate from its per-view similarities.

    The Gaussian normalising constant is dropped; only relative values matter.
    """
    return math.exp(sum(float(t) - 1.0 for t in taus))


@dataclass(frozen=True)
class CandidateAssociation:
    indices: tuple
    credibility: float = 1.0


def candidate_groups(projections, frame_measurements, prev=None) -> list[CandidateAssociation]:
    """All per-view measurement tuples overlapping the projected state.

    Args:
        projections: One pixel set per view.
        frame_measurements: One list of :class:`Measurement` per view.
        prev: Optional per-view previous association (for appearance).

    Returns:
        Candidates in lexicographic index order; empty when some view has no
        overlapping measurement.
    """
    if prev is None:
        prev = [None] * len(projections)
    per_view = []
    for proj, ms, pv in zip(projections, frame_measurements, prev):
        options = []
        for k, m in enumerate(ms):
            eta = overlap_ratio(proj, m)
            if eta > 0:
                options.append((k, min(eta * appearance_factor(m, pv), 1.0)))
        if not options:
            return []
        per_view.append(options)
    group = []
    for combo in itertools.product(*per_view):
        idx = tuple(k for k, _ in combo)
        group.append(CandidateAssociation(idx, credibility([t for _, t in combo])))
    return group


def best_candidate(group: Sequence[CandidateAssociation]) -> Optional[CandidateAssociation]:
    """Most credible candidate; ties go to the smallest index tuple."""
    if not group:
        return None
    return min(group, key=lambda c: (-c.credibility, c.indices))


def extract_patch(image, centroid, size: int = PATCH_SIZE) -> np.ndarray:
    """Grayscale window centred on a blob centroid, zero-padded at borders."""
    img = np.asarray(image, dtype=float)
    cu, cv = (int(np.floor(c + 0.5)) for c in centroid)
    half = size // 2
    out = np.zeros((size, size))
    v0, u0 = cv - half, cu - half
    vs0, vs1 = max(v0, 0), min(v0 + size, img.shape[0])
    us0, us1 = max(u0, 0), min(u0 + size, img.shape[1])
    if vs0 < vs1 and us0 < us1:
        out[vs0 - v0:vs1 - v0, us0 - u0:us1 - u0] = img[vs0:vs1, us0:us1]
    return out


@dataclass(eq=False)
class ViewFrame:
    """All measurements of one view at one frame, with packed pixel arrays
    for vectorized overlap queries."""

    view_id: int
    frame: int
    measurements: list
    pixels: np.ndarray = field(init=False, repr=False)
    starts: np.ndarray = field(init=False, repr=False)
    sizes: np.ndarray = field(init=False, repr=False)
    bboxes: np.ndarray = field(init=False, repr=False)
    centroids: np.ndarray = field(init=False, repr=False)
    has_patches: bool = field(init=False, repr=False)
    _pu: np.ndarray = field(init=False, repr=False)
    _pv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ms = self.measurements
        self.sizes = np.array([m.size for m in ms], dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64) \
            if ms else np.zeros(0, dtype=np.int64)
        self.pixels = np.vstack([m.pixels for m in ms]) if ms else np.empty((0, 2), np.int64)
        self.bboxes = np.array([[m.pixels[:, 0].min(), m.pixels[:, 0].max(),
                                 m.pixels[:, 1].min(), m.pixels[:, 1].max()] for m in ms],
                               dtype=float).reshape(-1, 4)
        self.centroids = np.array([m.centroid for m in ms], dtype=float).reshape(-1, 2)
        self.has_patches = any(m.patch is not None for m in ms)
        self._pu = self.pixels[:, 0].astype(float)
        self._pv = self.pixels[:, 1].astype(float)

    def __len__(self):
        return len(self.measurements)

    def disc_pairs(self, centers, radii) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Overlaps between discs and measurements, as a sparse pair list.

        Uses the same coverage rule as :func:`geometry.disc_pixels`.

        Returns:
            ``(disc_idx, blob_idx, ratio)`` for every disc/measurement pair
            with a non-zero overlap ratio, ordered by disc then measurement.
        """
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (len(centers),))
        empty = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
        if len(self) == 0 or len(centers) == 0:
            return empty
        # the nearest pixel is always covered, so reach at least half a diagonal
        reach = np.maximum(radii, 0.75)[:, None]
        cu, cv = centers[:, 0:1], centers[:, 1:2]
        b = self.bboxes
        near = ((b[:, 1] >= cu - reach) & (b[:, 0] <= cu + reach)
                & (b[:, 3] >= cv - reach) & (b[:, 2] <= cv + reach))
        di, bi = np.nonzero(near)
        if len(di) == 0:
            return empty
        sizes = self.sizes[bi]
        ends = np.cumsum(sizes)
        starts = ends - sizes
        gather = np.arange(ends[-1]) + np.repeat(self.starts[bi] - starts, sizes)
        pu = self._pu[gather]
        pv = self._pv[gather]
        pc = centers[di]
        r = radii[di]
        du = pu - np.repeat(pc[:, 0], sizes)
        dv = pv - np.repeat(pc[:, 1], sizes)
        inside = du * du + dv * dv <= np.repeat(r * r, sizes)
        small = r * r < 0.5
        if np.any(small):
            # below this radius the nearest pixel may lie outside the disc
            near_px = np.floor(pc + 0.5)
            m = np.repeat(small, sizes)
            inside[m] |= ((pu[m] == np.repeat(near_px[small, 0], sizes[small]))
                          & (pv[m] == np.repeat(near_px[small, 1], sizes[small])))
        counts = np.add.reduceat(inside.astype(np.int64), starts)
        ratio = counts / sizes
        keep = counts > 0
        return di[keep], bi[keep], ratio[keep]


class MeasurementSet:
    """Measurements for a whole sequence, indexed by frame then view."""

    def __init__(self, frames: dict, view_ids: Sequence[int]):
        self.view_ids = list(view_ids)
        self._frames = {}
        for f in sorted(frames):
            per_view = frames[f]
            self._frames[f] = [ViewFrame(v, f, list(per_view.get(v, []))) for v in self.view_ids]

    @property
    def frames(self) -> list[int]:
        return list(self._frames)

    def __getitem__(self, frame: int) -> list[ViewFrame]:
        if frame in self._frames:
            return self._frames[frame]
        return [ViewFrame(v, frame, []) for v in self.view_ids]

    def to_json(self) -> list:
        out = []
        for f, views in self._frames.items():
            vlist = []
            for vf in views:
                blobs = []
                for m in vf.measurements:
                    b = {"id": int(m.id),
                         "centroid": [round(float(c), 6) for c in m.centroid],
                         "pixels": m.pixels.tolist()}
                    if m.patch is not None:
                        b["patch"] = np.asarray(m.patch).tolist()
                    blobs.append(b)
                vlist.append({"view_id": int(vf.view_id), "blobs": blobs})
            out.append({"frame": int(f), "views": vlist})
        return out

    @classmethod
    def from_json(cls, data: list, view_ids: Optional[Sequence[int]] = None) -> "MeasurementSet":
        frames = {}
        seen_views = set()
        for fr in data:
            f = int(fr["frame"])
            per_view = {}
            for vd in fr["views"]:
                v = int(vd["view_id"])
                seen_views.add(v)
                ms = []
                for b in sorted(vd["blobs"], key=lambda b: int(b["id"])):
                    patch = np.asarray(b["patch"], dtype=float) if "patch" in b else None
                    pix = np.asarray(b["pixels"], dtype=np.int64).reshape(-1, 2)
                    centroid = np.asarray(b.get("centroid", pix.mean(axis=0)), dtype=float)
                    ms.append(Measurement(v, f, int(b["id"]), pix, centroid, patch))
                per_view[v] = ms
            frames[f] = per_view
        return cls(frames, sorted(view_ids if view_ids is not None else seen_views))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path, view_ids=None) -> "MeasurementSet":
        with open(Path(path)) as fh:
            return cls.from_json(json.load(fh), view_ids)
