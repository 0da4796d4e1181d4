"""Ground plane polling.

For each detection, every candidate plane turns the l/m/r keypoints into 3D
points on the plane and the top keypoint into a point on the normal line
through the middle one. Six pairwise distances are compared with the lengths
implied by the predicted dimensions; the plane with the smallest summed
absolute error wins and the cuboid is built on it.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .encoding import Dimensions3D, OrientationClass
from .errors import DegenerateEdge, GeometryError, NoFeasiblePlane
from .geometry import (
    PARALLEL_EPS,
    Cuboid3D,
    Plane,
    ProjectionMatrix,
    Ray,
    backproject,
    closest_point_on_normal_line,
    intersect_ray_plane,
)

L, M, R, T = range(4)
KEYPOINT_NAMES = ("l", "m", "r", "t")


@dataclass(frozen=True, eq=False)
class Detection:
    """One 2D detection with keypoints ordered (left, middle, right, top)."""

    box2d: np.ndarray
    keypoints: np.ndarray
    orientation: OrientationClass
    dims: Dimensions3D
    score: float = 1.0
    class_id: int = 0

    def __post_init__(self):
        box = np.asarray(self.box2d, dtype=np.float64).reshape(4)
        kps = np.asarray(self.keypoints, dtype=np.float64).reshape(4, 2)
        if not (np.all(np.isfinite(box)) and np.all(np.isfinite(kps))):
            raise ValueError("detection has non-finite box or keypoints")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        object.__setattr__(self, "box2d", box)
        object.__setattr__(self, "keypoints", kps)

    def keypoints_in_dilated_box(self, factor=1.5) -> bool:
        x1, y1, x2, y2 = self.box2d
        cx, cy = 0.5 * (x1 + x2), 0.5 * (y1 + y2)
        hw, hh = 0.5 * factor * (x2 - x1), 0.5 * factor * (y2 - y1)
        k = self.keypoints
        return bool(
            np.all(np.abs(k[:, 0] - cx) <= hw) and np.all(np.abs(k[:, 1] - cy) <= hh)
        )


class Triplet(NamedTuple):
    i: int
    j: int
    length: float


def build_triplets(d: Detection) -> tuple:
    """The six (keypoint, keypoint, expected length) triplets.

    Order: (l,m), (m,r), (m,t) are the three box sides; (l,r), (l,t), (r,t)
    are the face diagonals spanned by them.
    """
    h, w, l = d.dims.h, d.dims.w, d.dims.l
    lm, mr = (l, w) if d.orientation.left_is_length else (w, l)
    return (
        Triplet(L, M, lm),
        Triplet(M, R, mr),
        Triplet(M, T, h),
        Triplet(L, R, math.hypot(lm, mr)),
        Triplet(L, T, math.hypot(lm, h)),
        Triplet(R, T, math.hypot(mr, h)),
    )


@dataclass(frozen=True, eq=False)
class PollResult:
    plane: Plane
    residual: float
    keypoints3d: np.ndarray
    cuboid: Cuboid3D
    index: int


def plane_residual(d: Detection, plane: Plane, P: ProjectionMatrix):
    """Total triplet residual of ``d`` on ``plane`` and the four 3D keypoints.

    Infeasible planes (ray parallel, intersection behind the camera,
    degenerate top construction) give ``(inf, None)``.
    """
    plane = plane.oriented_toward(P.center)
    if plane.signed_distance(P.center) <= 0:
        return math.inf, None
    try:
        rays = [backproject(P, x) for x in d.keypoints]
        X = [intersect_ray_plane(rays[i], plane) for i in (L, M, R)]
        X.append(closest_point_on_normal_line(rays[T], plane, X[M]))
    except GeometryError:
        return math.inf, None
    X = np.array(X)
    err = 0.0
    for i, j, length in build_triplets(d):
        err += abs(float(np.linalg.norm(X[i] - X[j])) - length)
    return err, X


def _plane_arrays(db, center):
    """(K, 3) normals and (K,) camera distances, oriented toward ``center``."""
    if hasattr(db, "coefficients"):
        coeffs = db.coefficients
    else:
        coeffs = [p.coeffs for p in db]
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1, 4)
    normals = coeffs[:, :3] / np.linalg.norm(coeffs[:, :3], axis=1, keepdims=True)
    offsets = coeffs[:, 3] / np.linalg.norm(coeffs[:, :3], axis=1)
    dist = normals @ center + offsets
    flip = np.where(dist < 0, -1.0, 1.0)
    return normals * flip[:, None], dist * flip


def _detection_arrays(ds: Sequence[Detection], P: ProjectionMatrix):
    dirs = P.directions(np.stack([d.keypoints for d in ds]))  # (B, 4, 3)
    lengths = np.array([[t.length for t in build_triplets(d)] for d in ds])
    return dirs, lengths


def _residual_block(dirs, lengths, normals, dist):
    """Residuals for B detections against K planes, shape (B, K).

    All six distances follow from the ray parameters alone: the l/m/r points
    share the camera center, and the top point sits on the normal through the
    middle point, orthogonal to any in-plane offset.
    """
    ndot = dirs @ normals.T  # (B, 4, K), contiguous per keypoint
    nl, nm, nr, nt = ndot[:, L], ndot[:, M], ndot[:, R], ndot[:, T]
    g = np.einsum("bki,bi->bk", dirs, dirs[:, M])
    g_lm, g_mr, g_tm = g[:, L, None], g[:, R, None], g[:, T, None]
    g_lr = np.einsum("bi,bi->b", dirs[:, L], dirs[:, R])[:, None]
    sin2 = 1.0 - nt * nt
    # l, m, r rays must hit the plane in front of the camera, the top ray must
    # not run along the normal, and the camera must lie off the plane.
    feasible = ndot[:, :3].max(axis=1) < -PARALLEL_EPS
    feasible &= sin2 > PARALLEL_EPS**2
    feasible &= dist > 0

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = np.divide(-dist, ndot[:, :3])  # ray parameters of l, m, r
        tl, tm, tr = t[:, 0], t[:, 1], t[:, 2]
        t2 = t * t
        height = nt * g_tm
        height -= nm
        height *= tm
        height /= sin2

        def side(u, v, u2, v2, cos):
            # law of cosines for two rays from the camera center
            out = u * v
            out *= -2.0 * cos
            out += u2
            out += v2
            return np.maximum(out, 0.0, out=out)

        a2 = side(tl, tm, t2[:, 0], t2[:, 1], g_lm)
        b2 = side(tm, tr, t2[:, 1], t2[:, 2], g_mr)
        c2 = side(tl, tr, t2[:, 0], t2[:, 2], g_lr)
        h2 = height * height

        def term(x, length):
            x -= length
            return np.abs(x, out=x)

        res = term(np.sqrt(a2), lengths[:, 0:1])
        res += term(np.sqrt(b2), lengths[:, 1:2])
        res += term(np.abs(height, out=height), lengths[:, 2:3])
        res += term(np.sqrt(c2), lengths[:, 3:4])
        a2 += h2
        b2 += h2
        res += term(np.sqrt(a2, out=a2), lengths[:, 4:5])
        res += term(np.sqrt(b2, out=b2), lengths[:, 5:6])
    feasible &= np.isfinite(res)
    np.copyto(res, np.inf, where=~feasible)
    return res


def residual_matrix(ds: Sequence[Detection], db, P: ProjectionMatrix) -> np.ndarray:
    """Total residual of every detection on every plane, shape (B, K)."""
    if len(ds) == 0:
        return np.zeros((0, len(db)))
    normals, dist = _plane_arrays(db, P.center)
    dirs, lengths = _detection_arrays(ds, P)
    return _residual_block(dirs, lengths, normals, dist)


def _argmin_residuals(ds, db, P, threads=1, chunk=None):
    """Per-detection (best index, best residual); lowest index wins ties.

    Planes are split into one chunk per thread (at least 1024 planes each)
    unless ``chunk`` is given.
    """
    normals, dist = _plane_arrays(db, P.center)
    dirs, lengths = _detection_arrays(ds, P)
    K = normals.shape[0]
    if chunk is None:
        chunk = max(1024, -(-K // max(threads or 1, 1)))
    spans = [(s, min(s + chunk, K)) for s in range(0, K, chunk)]

    def run(span):
        s, e = span
        res = _residual_block(dirs, lengths, normals[s:e], dist[s:e])
        idx = np.argmin(res, axis=1)
        return idx + s, res[np.arange(len(ds)), idx]

    if threads and threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(sp) for sp in spans]

    best_idx = np.zeros(len(ds), dtype=int)
    best_res = np.full(len(ds), np.inf)
    # Spans are visited in rank order, so strict < keeps the earliest index.
    for idx, res in parts:
        better = res < best_res
        best_idx = np.where(better, idx, best_idx)
        best_res = np.where(better, res, best_res)
    return best_idx, best_res


def _plane_at(db, k) -> Plane:
    if hasattr(db, "plane"):
        return db.plane(k)
    return db[k]


def keypoints_on_plane(d: Detection, plane: Plane, P: ProjectionMatrix) -> np.ndarray:
    rays = [Ray(P.center, r) for r in P.directions(d.keypoints)]
    X = [intersect_ray_plane(rays[i], plane) for i in (L, M, R)]
    X.append(closest_point_on_normal_line(rays[T], plane, X[M]))
    return np.array(X)


def construct_cuboid(keypoints3d, plane: Plane, d: Detection) -> Cuboid3D:
    """Build the box from the middle keypoint and the length-edge neighbor.

    Of the left/right keypoints, the one on the width edge is dropped. The
    kept edge fixes the yaw and is rescaled to the predicted length; the width
    edge is laid perpendicular to it inside the plane, on the side of the
    dropped keypoint; the top face sits ``h`` along the plane normal.
    """
    X = np.asarray(keypoints3d, dtype=np.float64)
    n = plane.normal
    o = d.orientation
    keep, drop = (L, R) if o.left_is_length else (R, L)
    e1 = X[keep] - X[M]
    e1 = e1 - (e1 @ n) * n
    norm = np.linalg.norm(e1)
    if norm < 1e-6:
        raise DegenerateEdge(f"|X_keep - X_m| = {norm:.3g} m")
    e1 = e1 / norm
    side = np.cross(n, e1)
    s = np.sign((X[drop] - X[M]) @ side)
    if s == 0:
        s = o.heading_sign * o.lateral_sign
    e2 = s * side
    h, w, l = d.dims.as_tuple()
    bottom_center = X[M] + 0.5 * l * e1 + 0.5 * w * e2
    heading = -o.heading_sign * e1
    return Cuboid3D.from_pose(bottom_center, heading, n, (h, w, l))


def _oriented_plane(db, k, P) -> Plane:
    return _plane_at(db, k).oriented_toward(P.center)


def poll(d: Detection, db, P: ProjectionMatrix) -> PollResult:
    """Best-fit plane for ``d`` from ``db`` and the cuboid built on it."""
    if len(db) == 0:
        raise ValueError("plane database is empty")
    idx, res = _argmin_residuals([d], db, P)
    k, r = int(idx[0]), float(res[0])
    if not math.isfinite(r):
        raise NoFeasiblePlane("every plane in the database is infeasible")
    plane = _oriented_plane(db, k, P)
    X = keypoints_on_plane(d, plane, P)
    return PollResult(plane, r, X, construct_cuboid(X, plane, d), k)


def poll_batch(ds: Sequence[Detection], db, P: ProjectionMatrix, threads=1, batch=32) -> list:
    """:func:`poll` over many detections; infeasible entries are ``None``."""
    if len(ds) == 0:
        return []
    if len(db) == 0:
        raise ValueError("plane database is empty")
    out = []
    for s in range(0, len(ds), batch):
        part = ds[s : s + batch]
        idx, res = _argmin_residuals(part, db, P, threads=threads)
        for d, k, r in zip(part, idx, res):
            if not math.isfinite(r):
                out.append(None)
                continue
            plane = _oriented_plane(db, int(k), P)
            try:
                X = keypoints_on_plane(d, plane, P)
                cub = construct_cuboid(X, plane, d)
            except GeometryError:
                out.append(None)
                continue
            out.append(PollResult(plane, float(r), X, cub, int(k)))
    return out
