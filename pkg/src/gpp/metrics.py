"""3D box evaluation: 2D/3D IoU, center and closest-point errors, yaw error,
AP/AOS/OS with KITTI-style recall sampling, and distance-binned curves."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import NonConvexFootprint
from .geometry import Cuboid3D

# Boxes whose up vectors differ by more than this (radians) get the exact
# polytope volume; below it the footprint product is exact to ~1e-6.
PARALLEL_UP_TOL = 1e-6


def iou_2d(a, b) -> float:
    ax1, ay1, ax2, ay2 = (float(v) for v in a)
    bx1, by1, bx2, by2 = (float(v) for v in b)
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else 0.0


def polygon_area(poly) -> float:
    """Signed shoelace area; positive for counter-clockwise vertices."""
    p = np.asarray(poly, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _check_convex_ccw(poly):
    p = np.asarray(poly, dtype=np.float64)
    e = np.roll(p, -1, axis=0) - p
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    scale = np.max(np.abs(p)) ** 2 + 1e-300
    if np.any(cross < -1e-12 * scale):
        raise NonConvexFootprint("footprint polygon is not convex")


def clip_convex(subject, clipper) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by convex CCW ``clipper``."""
    out = [np.asarray(v, dtype=np.float64) for v in subject]
    C = np.asarray(clipper, dtype=np.float64)
    for i in range(len(C)):
        if not out:
            break
        a, b = C[i], C[(i + 1) % len(C)]
        edge = b - a

        def side(p):
            return edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0])

        inp, out = out, []
        for j in range(len(inp)):
            p, q = inp[j], inp[(j + 1) % len(inp)]
            sp, sq = side(p), side(q)
            if sp >= 0:
                out.append(p)
            if (sp >= 0) != (sq >= 0):
                t = sp / (sp - sq)
                out.append(p + t * (q - p))
    return np.array(out).reshape(-1, 2)


def _footprint(c: Cuboid3D, e1, e2):
    poly = np.stack([c.corners[:4] @ e1, c.corners[:4] @ e2], axis=1)
    if polygon_area(poly) < 0:
        poly = poly[::-1]
    _check_convex_ccw(poly)
    return poly


def _halfspaces(c: Cuboid3D) -> np.ndarray:
    """Rows (n, -offset) with n.x - offset <= 0 inside, scipy layout."""
    h, w, l = c.dims
    rows = []
    for axis, half in ((c.heading, 0.5 * l), (c.up, 0.5 * h), (c.lateral, 0.5 * w)):
        for s in (1.0, -1.0):
            n = s * axis
            rows.append(np.append(n, -(n @ c.center) - half))
    return np.array(rows)


def iou_3d_polytope(a: Cuboid3D, b: Cuboid3D) -> float:
    """Exact volume IoU of two arbitrarily oriented boxes via halfspace
    intersection; used when the boxes do not share an up direction."""
    from scipy.optimize import linprog
    from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError

    hs = np.vstack([_halfspaces(a), _halfspaces(b)])
    norms = np.linalg.norm(hs[:, :3], axis=1)
    # Chebyshev center: the deepest interior point of the intersection.
    res = linprog(
        c=[0, 0, 0, -1],
        A_ub=np.column_stack([hs[:, :3], norms]),
        b_ub=-hs[:, 3],
        bounds=[(None, None)] * 3 + [(0, None)],
    )
    if not res.success or res.x[3] <= 1e-9:
        return 0.0
    try:
        pts = HalfspaceIntersection(hs, res.x[:3]).intersections
        inter = ConvexHull(pts).volume
    except QhullError:
        return 0.0
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0))


def iou_3d(a: Cuboid3D, b: Cuboid3D) -> float:
    """Volume IoU as footprint-overlap area times vertical overlap.

    The footprints are projected onto the plane orthogonal to the mean up
    vector, which is exact for boxes sharing their up direction. Pairs whose
    up directions are not parallel go through :func:`iou_3d_polytope`: even a
    one-degree tilt makes the footprint product overestimate by a few percent.
    """
    sin = float(np.linalg.norm(np.cross(a.up, b.up)))
    if a.up @ b.up <= 0 or sin > PARALLEL_UP_TOL:
        return iou_3d_polytope(a, b)
    u = a.up + b.up
    u = u / np.linalg.norm(u)
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    pa, pb = _footprint(a, e1, e2), _footprint(b, e1, e2)
    area = abs(polygon_area(clip_convex(pa, pb)))
    ha, hb = a.corners @ u, b.corners @ u
    overlap = max(0.0, min(ha.max(), hb.max()) - max(ha.min(), hb.min()))
    inter = area * overlap
    union = a.volume + b.volume - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


def center_error(pred: Cuboid3D, truth: Cuboid3D) -> float:
    return float(np.linalg.norm(pred.center - truth.center))


def closest_point_error(pred: Cuboid3D, truth: Cuboid3D, camera=np.zeros(3)) -> float:
    """Difference in camera distance to the nearest point of each solid box."""
    return abs(float(pred.distance_to_point(camera)) - float(truth.distance_to_point(camera)))


def orientation_error(pred_yaw: float, truth_yaw: float) -> float:
    """Absolute yaw difference wrapped to [0, pi], radians."""
    d = (pred_yaw - truth_yaw + math.pi) % (2 * math.pi) - math.pi
    return abs(d)


def orientation_similarity(pred_alpha: float, truth_alpha: float) -> float:
    return 0.5 * (1.0 + math.cos(pred_alpha - truth_alpha))


@dataclass(frozen=True, eq=False)
class EvalPair:
    predicted: Cuboid3D
    truth: Cuboid3D
    pred_box2d: np.ndarray | None = None
    truth_box2d: np.ndarray | None = None
    camera: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.truth.center - self.camera))

    def center_error(self) -> float:
        return center_error(self.predicted, self.truth)

    def closest_point_error(self) -> float:
        return closest_point_error(self.predicted, self.truth, self.camera)

    def iou_3d(self) -> float:
        return iou_3d(self.predicted, self.truth)

    def orientation_error_deg(self) -> float:
        return math.degrees(orientation_error(self.predicted.yaw, self.truth.yaw))


# --- AP / AOS / OS ------------------------------------------------------------

class Scored(NamedTuple):
    """A 2D detection (or ground truth, with score ignored) for AP/AOS."""

    frame: str
    box: tuple
    alpha: float
    score: float = 1.0


class APResult(NamedTuple):
    ap: float | None
    aos: float | None
    os: float | None


def recall_thresholds(points: int) -> list:
    if points == 40:
        return [j / 40 for j in range(1, 41)]
    if points == 11:
        return [j / 10 for j in range(11)]
    raise ValueError("recall sampling must be 11 or 40 points")


def match_greedy(dets: Sequence[Scored], gts: Sequence[Scored], iou_threshold=0.7):
    """Greedy matching by descending score.

    Returns ``(order, matched)`` where ``order`` lists detection indices by
    score and ``matched[i]`` is the gt index for ``order[i]`` or -1.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    by_frame: dict = {}
    for j, g in enumerate(gts):
        by_frame.setdefault(g.frame, []).append(j)
    taken = np.zeros(len(gts), dtype=bool)
    matched = []
    for i in order:
        d = dets[i]
        best, best_iou = -1, iou_threshold
        for j in by_frame.get(d.frame, ()):
            if taken[j]:
                continue
            ov = iou_2d(d.box, gts[j].box)
            if ov >= best_iou and (best < 0 or ov > best_iou):
                best, best_iou = j, ov
        if best >= 0:
            taken[best] = True
        matched.append(best)
    return order, matched


def average_orientation_similarity(dets, gts, iou_threshold=0.7, recall_points=40) -> APResult:
    """AP, AOS and OS = AOS / AP.

    Orientation similarity at rank k is the summed (1 + cos dalpha) / 2 of
    true positives up to k divided by k, interpolated like precision. With no
    ground truth every value is ``None``.
    """
    if len(gts) == 0:
        return APResult(None, None, None)
    order, matched = match_greedy(dets, gts, iou_threshold)
    n_gt = len(gts)
    tp = 0
    sim = 0.0
    prec, rec, osim = [], [], []
    for k, (i, j) in enumerate(zip(order, matched), start=1):
        if j >= 0:
            tp += 1
            sim += orientation_similarity(dets[i].alpha, gts[j].alpha)
        prec.append(tp / k)
        osim.append(sim / k)
        rec.append(tp / n_gt)
    prec, rec, osim = np.array(prec), np.array(rec), np.array(osim)
    ts = recall_thresholds(recall_points)
    ap = aos = 0.0
    for r in ts:
        mask = rec >= r
        if mask.any():
            ap += float(prec[mask].max())
            aos += float(osim[mask].max())
    ap /= len(ts)
    aos /= len(ts)
    return APResult(ap, aos, aos / ap if ap > 0 else None)


def kitti_difficulty(label) -> int | None:
    """0 easy, 1 moderate, 2 hard, ``None`` if outside every level."""
    height = label.bbox[3] - label.bbox[1]
    for level, (min_h, max_occ, max_trunc) in enumerate([(40, 0, 0.15), (25, 1, 0.3), (25, 2, 0.5)]):
        if height >= min_h and label.occluded <= max_occ and label.truncated <= max_trunc:
            return level
    return None


# --- distance curves ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CurveSeries:
    edges: np.ndarray
    means: np.ndarray
    counts: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0

    def to_text(self) -> str:
        rows = []
        for lo, hi, m, c in zip(self.edges[:-1], self.edges[1:], self.means, self.counts):
            rows.append(f"{lo:.17g} {hi:.17g} {m:.17g} {int(c)}")
        return "\n".join(rows) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "CurveSeries":
        rows = [list(map(float, l.split())) for l in text.splitlines() if l.strip()]
        arr = np.array(rows).reshape(-1, 4)
        edges = np.append(arr[:, 0], arr[-1, 1]) if len(arr) else np.zeros(1)
        return cls(edges, arr[:, 2], arr[:, 3].astype(int))


def bin_values(values, distances, edges) -> CurveSeries:
    """Mean of ``values`` per distance bin [lo, hi); last bin closed."""
    values = np.asarray(values, dtype=np.float64)
    distances = np.asarray(distances, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("edges must be strictly increasing with at least two entries")
    idx = np.searchsorted(edges, distances, side="right") - 1
    idx[distances == edges[-1]] = len(edges) - 2
    ok = (idx >= 0) & (idx < len(edges) - 1)
    counts = np.bincount(idx[ok], minlength=len(edges) - 1)
    sums = np.bincount(idx[ok], weights=values[ok], minlength=len(edges) - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return CurveSeries(edges, means, counts)


def bin_by_distance(pairs: Sequence[EvalPair], metric: Callable, edges) -> CurveSeries:
    return bin_values([metric(p) for p in pairs], [p.distance for p in pairs], edges)
