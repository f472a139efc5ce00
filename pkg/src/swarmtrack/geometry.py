"""Pinhole cameras, ball footprints, triangulation and epipolar gating.

Pixel sets are ``(n, 2)`` integer arrays of ``(u, v)`` raster coordinates.
A pixel ``(u, v)`` covers the unit square centred on that coordinate and is
inside the image when ``0 <= u < width`` and ``0 <= v < height``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CalibrationMissing, DegenerateRays, DegenerateRig, PointBehindCamera

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CameraModel:
    """One calibrated view.

    Args:
        projection: 3x4 matrix mapping homogeneous world points to
            homogeneous pixels.
        image_width, image_height: Image size in pixels.
        view_id: Small integer naming the view.
    """

    projection: np.ndarray
    image_width: int
    image_height: int
    view_id: int = 0
    # Derived quantities, filled in __post_init__.
    _normalized: np.ndarray = field(init=False, repr=False)
    _focal: float = field(init=False, repr=False)
    _center: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = np.asarray(self.projection, dtype=float).reshape(3, 4)
        if not np.all(np.isfinite(P)):
            raise ValueError("projection must be finite")
        if np.linalg.matrix_rank(P) < 3:
            raise ValueError("projection must have rank 3")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        M = P[:, :3]
        # Scale so the third row is a unit vector and points forward: the
        # third homogeneous coordinate then equals metric depth.
        scale = np.sign(np.linalg.det(M)) / np.linalg.norm(M[2])
        Pn = P * scale
        m1, m2, m3 = Pn[0, :3], Pn[1, :3], Pn[2, :3]
        fx = np.linalg.norm(np.cross(m1, m3))
        fy = np.linalg.norm(np.cross(m2, m3))
        _, _, vt = np.linalg.svd(P)
        C = vt[-1]
        object.__setattr__(self, "projection", P)
        object.__setattr__(self, "_normalized", Pn)
        object.__setattr__(self, "_focal", float(np.sqrt(fx * fy)))
        object.__setattr__(self, "_center", C[:3] / C[3])

    @property
    def focal_scale(self) -> float:
        """Geometric mean of the horizontal and vertical focal lengths (px)."""
        return self._focal

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return self._center

    def depth(self, points) -> np.ndarray:
        """Signed metric depth of world points along the optical axis."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return pts @ self._normalized[2, :3] + self._normalized[2, 3]

    def to_dict(self) -> dict:
        return {
            "view_id": int(self.view_id),
            "projection": [float(x) for x in self.projection.ravel()],
            "width": int(self.image_width),
            "height": int(self.image_height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            projection=np.asarray(d["projection"], dtype=float).reshape(3, 4),
            image_width=int(d["width"]),
            image_height=int(d["height"]),
            view_id=int(d["view_id"]),
        )


def look_at_camera(position, target, focal: float, width: int, height: int,
                   view_id: int = 0, up=(0.0, 0.0, 1.0)) -> CameraModel:
    """Build a square-pixel camera at ``position`` looking at ``target``.

    The image ``v`` axis points down, the principal point sits at the image
    centre.
    """
    pos = np.asarray(position, dtype=float)
    forward = np.asarray(target, dtype=float) - pos
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.vstack([right, down, forward])
    K = np.array([[focal, 0.0, (width - 1) / 2.0],
                  [0.0, focal, (height - 1) / 2.0],
                  [0.0, 0.0, 1.0]])
    P = K @ np.hstack([R, (-R @ pos)[:, None]])
    return CameraModel(P, width, height, view_id)


def project_points(camera: CameraModel, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection. Returns ``(pixels (n, 2), depths (n,))``.

    Points behind the camera are not rejected here; callers check depths.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    Pn = camera._normalized
    h = pts @ Pn[:, :3].T + Pn[:, 3]
    w = h[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = h[:, :2] / w[:, None]
    return uv, w


def project(camera: CameraModel, p) -> np.ndarray:
    """Project one world point to ``(u, v)`` pixel coordinates."""
    uv, w = project_points(camera, np.asarray(p, dtype=float)[None, :3])
    if not w[0] > 0:
        raise PointBehindCamera(f"depth {w[0]:.3g} <= 0 in view {camera.view_id}")
    return uv[0]


def nearest_pixel(uv) -> np.ndarray:
    # Round half up, not to even.
    return np.floor(np.asarray(uv, dtype=float) + 0.5).astype(np.int64)


def disc_pixels(center_uv, radius_px: float, width: int, height: int) -> np.ndarray:
    """Integer pixels whose centres lie in a disc, clipped to the image.

    The pixel nearest the disc centre is always included when it is in
    bounds, so a zero radius yields that single pixel.
    """
    cu, cv = float(center_uv[0]), float(center_uv[1])
    r = max(float(radius_px), 0.0)
    nu, nv = (int(x) for x in nearest_pixel((cu, cv)))
    u0 = max(min(int(np.ceil(cu - r)), nu), 0)
    u1 = min(max(int(np.floor(cu + r)), nu), width - 1)
    v0 = max(min(int(np.ceil(cv - r)), nv), 0)
    v1 = min(max(int(np.floor(cv + r)), nv), height - 1)
    if u0 > u1 or v0 > v1:
        return np.empty((0, 2), dtype=np.int64)
    # mgrid over (v, u) yields raster order, row (v) major
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    inside = ((uu - cu) ** 2 + (vv - cv) ** 2 <= r * r) | ((uu == nu) & (vv == nv))
    return np.column_stack([uu[inside], vv[inside]]).astype(np.int64)


def ball_radius_px(camera: CameraModel, depth, radius: float):
    """Radius of the disc approximating a ball's silhouette, in pixels."""
    return camera.focal_scale * radius / np.asarray(depth, dtype=float)


def project_ball(camera: CameraModel, center, radius: float) -> np.ndarray:
    """Pixel footprint of a ball: a filled disc of radius ``f * r / depth``."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    uv, w = project_points(camera, np.asarray(center, dtype=float)[None, :3])
    if not w[0] > 0:
        raise PointBehindCamera(f"depth {w[0]:.3g} <= 0 in view {camera.view_id}")
    r = float(ball_radius_px(camera, w[0], radius))
    return disc_pixels(uv[0], r, camera.image_width, camera.image_height)


def _check_baseline(cameras: Sequence[CameraModel]) -> None:
    if len(cameras) < 2:
        raise ValueError("need at least two views")
    centers = np.array([c.center for c in cameras])
    spread = np.max(np.linalg.norm(centers - centers[0], axis=1))
    if spread <= RANK_TOL * max(1.0, np.max(np.linalg.norm(centers, axis=1))):
        raise DegenerateRays("camera centres coincide")


def triangulate_many(cameras: Sequence[CameraModel], pixels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched linear (DLT) triangulation.

    Args:
        cameras: ``V >= 2`` cameras.
        pixels: ``(m, V, 2)`` corresponding pixels.

    Returns:
        ``(points (m, 3), rms_residual_px (m,), ok (m,))``. Rows with a
        rank-deficient system or rays meeting at infinity have ``ok`` False
        and NaN points.

    Raises:
        DegenerateRays: if the camera centres coincide.
    """
    _check_baseline(cameras)
    px = np.asarray(pixels, dtype=float).reshape(-1, len(cameras), 2)
    m = len(px)
    Ps = np.array([c._normalized for c in cameras])                  # (V, 3, 4)
    rows_u = px[:, :, 0, None] * Ps[None, :, 2] - Ps[None, :, 0]     # (m, V, 4)
    rows_v = px[:, :, 1, None] * Ps[None, :, 2] - Ps[None, :, 1]
    A = np.concatenate([rows_u, rows_v], axis=1)
    A /= np.linalg.norm(A, axis=2, keepdims=True)
    if m == 0:
        return np.empty((0, 3)), np.empty(0), np.zeros(0, bool)
    _, s, vt = np.linalg.svd(A)
    Xh = vt[:, -1]
    ok = (s[:, -2] > RANK_TOL * s[:, 0]) & (np.abs(Xh[:, 3]) > RANK_TOL * np.linalg.norm(Xh, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / Xh[:, 3:]
    X[~ok] = np.nan
    h = np.einsum("vij,mj->mvi", Ps, np.column_stack([X, np.ones(m)]))
    with np.errstate(invalid="ignore"):
        err2 = np.sum((h[:, :, :2] / h[:, :, 2:] - px) ** 2, axis=2)
    return X, np.sqrt(np.mean(err2, axis=1)), ok


def triangulate_views(cameras: Sequence[CameraModel], pixels) -> tuple[np.ndarray, float]:
    """Linear (DLT) triangulation from two or more views.

    Returns the 3D point and the RMS reprojection residual in pixels.

    Raises:
        DegenerateRays: coincident camera centres or a rank-deficient system.
    """
    X, res, ok = triangulate_many(cameras, np.asarray(pixels, dtype=float)[None])
    if not ok[0]:
        raise DegenerateRays("linear system is rank deficient")
    return X[0], float(res[0])


def triangulate(cam1: CameraModel, px1, cam2: CameraModel, px2) -> tuple[np.ndarray, float]:
    return triangulate_views([cam1, cam2], [px1, px2])


def _skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def fundamental_matrix(cam1: CameraModel, cam2: CameraModel) -> np.ndarray:
    """F with ``x2^T F x1 = 0`` for corresponding homogeneous pixels."""
    c1, c2 = cam1.center, cam2.center
    if np.linalg.norm(c1 - c2) <= RANK_TOL * max(1.0, np.linalg.norm(c1)):
        raise DegenerateRig("camera centres coincide")
    e2 = cam2.projection @ np.append(c1, 1.0)
    F = _skew(e2) @ cam2.projection @ np.linalg.pinv(cam1.projection)
    return F / np.linalg.norm(F)


def epipolar_distances(F: np.ndarray, px1, px2) -> np.ndarray:
    """Symmetric epipolar distances for all pairs, shape ``(n1, n2)``.

    Each entry is the mean of the point-to-line distance in image 2 and in
    image 1.
    """
    x1 = np.column_stack([np.atleast_2d(px1), np.ones(len(np.atleast_2d(px1)))])
    x2 = np.column_stack([np.atleast_2d(px2), np.ones(len(np.atleast_2d(px2)))])
    l2 = x1 @ F.T          # lines in image 2, one per px1
    l1 = x2 @ F            # lines in image 1, one per px2
    alg = x1 @ F.T @ x2.T  # alg[i, j] = x2_j^T F x1_i
    n2 = np.hypot(l2[:, 0], l2[:, 1])[:, None]
    n1 = np.hypot(l1[:, 0], l1[:, 1])[None, :]
    return 0.5 * (np.abs(alg) / n2 + np.abs(alg) / n1)


def _order_key(cam: CameraModel):
    return (cam.view_id, cam.projection.tobytes())


def epipolar_distance(cam1: CameraModel, px1, cam2: CameraModel, px2) -> float:
    # Fixed argument order so the result is exactly symmetric.
    if _order_key(cam2) < _order_key(cam1):
        cam1, px1, cam2, px2 = cam2, px2, cam1, px1
    F = fundamental_matrix(cam1, cam2)
    return float(epipolar_distances(F, np.asarray(px1)[None], np.asarray(px2)[None])[0, 0])


def load_calibration(path) -> list[CameraModel]:
    path = Path(path)
    if not path.is_file():
        raise CalibrationMissing(f"calibration file not found: {path}")
    with open(path) as fh:
        data = json.load(fh)
    cams = [CameraModel.from_dict(d) for d in data]
    return sorted(cams, key=lambda c: c.view_id)


def save_calibration(cameras: Sequence[CameraModel], path) -> None:
    with open(path, "w") as fh:
        json.dump([c.to_dict() for c in cameras], fh, indent=1)
        fh.write("\n")
