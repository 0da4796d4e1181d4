"""Ground-plane database: semantic filtering of LiDAR points, RANSAC plane
extraction with inlier removal, inlier-count ranking, and the text file format.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InsufficientPoints, ParseError
from .geometry import CAMERA_UP, Plane, ProjectionMatrix

GROUND_CLASSES = frozenset({"ground", "road", "sidewalk", "parking"})
DB_HEADER = "gppdb v1"


@dataclass(frozen=True, eq=False)
class LabeledCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if lab.size != len(pts):
                raise ValueError("one label per point required")
            object.__setattr__(self, "labels", lab)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class SemanticMap:
    """Per-pixel class ids with an id -> name table."""

    raster: np.ndarray
    classes: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.raster)
        if r.ndim != 2:
            raise ValueError("semantic raster must be 2D (height, width)")
        object.__setattr__(self, "raster", r.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return self.raster.shape[1]

    @property
    def height(self) -> int:
        return self.raster.shape[0]

    def ids_for(self, classes) -> set:
        """Resolve a mix of class names and integer ids to ids."""
        by_name = {name: cid for cid, name in self.classes.items()}
        out = set()
        for c in classes:
            if isinstance(c, str):
                if c in by_name:
                    out.add(by_name[c])
            else:
                out.add(int(c))
        return out


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 0.02
    success_probability: float = 0.999
    min_points: int = 3
    max_iterations: int = 10_000
    refit: bool = True

    def __post_init__(self):
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.success_probability < 1:
            raise ValueError("success_probability must lie in (0, 1)")
        if self.min_points < 3:
            raise ValueError("a plane needs at least 3 points")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def filter_by_semantics(cloud: LabeledCloud, P: ProjectionMatrix, seg: SemanticMap,
                        classes=GROUND_CLASSES) -> LabeledCloud:
    """Keep points in front of the camera whose pixel carries a wanted label."""
    pts = cloud.points
    if len(pts) == 0:
        return LabeledCloud(pts, np.zeros(0, dtype=np.int64))
    depth = P.depth(pts)
    front = depth > 0
    uv = np.full((len(pts), 2), -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        uv[front] = P.project(pts[front])
    u = np.floor(uv[:, 0])
    v = np.floor(uv[:, 1])
    inside = front & (u >= 0) & (u < seg.width) & (v >= 0) & (v < seg.height)
    labels = np.full(len(pts), -1, dtype=np.int64)
    labels[inside] = seg.raster[v[inside].astype(int), u[inside].astype(int)]
    keep = inside & np.isin(labels, list(seg.ids_for(classes)))
    return LabeledCloud(pts[keep], labels[keep])


def required_iterations(inlier_ratio: float, p: float, sample_size: int = 3) -> float:
    """Trials needed to draw one all-inlier sample with probability ``p``."""
    ws = inlier_ratio**sample_size
    if ws >= 1.0:
        return 1.0
    if ws <= 0.0:
        return math.inf
    return math.ceil(math.log(1.0 - p) / math.log1p(-ws))


def fit_plane_lsq(points) -> Plane:
    """Total least-squares plane through ``points`` (SVD of the centered set)."""
    pts = np.asarray(points, dtype=np.float64)
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    return Plane.from_point_normal(c, vt[-1])


def _sample_planes(pts, rng, n):
    """``n`` candidate planes from non-collinear random triples, as (n, 4)."""
    out = np.empty((0, 4))
    N = len(pts)
    while len(out) < n:
        idx = rng.integers(0, N, size=(2 * (n - len(out)) + 8, 3))
        distinct = (idx[:, 0] != idx[:, 1]) & (idx[:, 1] != idx[:, 2]) & (idx[:, 0] != idx[:, 2])
        idx = idx[distinct]
        p0, p1, p2 = pts[idx[:, 0]], pts[idx[:, 1]], pts[idx[:, 2]]
        nrm = np.cross(p1 - p0, p2 - p0)
        mag = np.linalg.norm(nrm, axis=1)
        ok = mag > 1e-12
        nrm = nrm[ok] / mag[ok, None]
        d = -np.einsum("ij,ij->i", nrm, p0[ok])
        out = np.vstack([out, np.column_stack([nrm, d])])
    return out[:n]


def _all_collinear(pts) -> bool:
    c = pts - pts.mean(axis=0)
    s = np.linalg.svd(c, compute_uv=False)
    return len(s) < 2 or s[1] <= 1e-12 * max(s[0], 1.0)


def ransac_plane(points, cfg: RansacConfig = RansacConfig(), rng_seed=None, batch=128):
    """Fit a plane to the largest consensus set of ``points``.

    Returns ``(plane, inlier_indices)`` where the inliers are every point
    within ``cfg.inlier_threshold`` of the returned plane. The trial budget
    adapts to the best inlier ratio seen so far and is capped by
    ``cfg.max_iterations``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n < max(cfg.min_points, 3):
        raise InsufficientPoints(f"{n} points, need at least {max(cfg.min_points, 3)}")
    if _all_collinear(pts):
        raise InsufficientPoints("points are collinear")
    rng = np.random.default_rng(rng_seed)
    thr = cfg.inlier_threshold

    best_count, best_plane = -1, None
    needed = float(cfg.max_iterations)
    done = 0
    while done < min(needed, cfg.max_iterations):
        k = int(min(batch, min(needed, cfg.max_iterations) - done))
        cand = _sample_planes(pts, rng, k)
        dist = np.abs(pts @ cand[:, :3].T + cand[:, 3])
        counts = np.count_nonzero(dist <= thr, axis=0)
        j = int(np.argmax(counts))
        if counts[j] > best_count:
            best_count, best_plane = int(counts[j]), cand[j]
            needed = required_iterations(best_count / n, cfg.success_probability)
        done += k

    plane = Plane(best_plane)
    inliers = np.flatnonzero(np.abs(plane.signed_distance(pts)) <= thr)
    if cfg.refit and len(inliers) >= 3 and not _all_collinear(pts[inliers]):
        refined = fit_plane_lsq(pts[inliers])
        ref_inliers = np.flatnonzero(np.abs(refined.signed_distance(pts)) <= thr)
        if len(ref_inliers) >= len(inliers):
            plane, inliers = refined, ref_inliers
    return plane, inliers


class PlaneEntry(NamedTuple):
    plane: Plane
    inlier_count: int
    source_frame: str


def _rank_key(e: PlaneEntry):
    return (-e.inlier_count, e.source_frame, tuple(e.plane.coeffs))


class PlaneDatabase:
    """Immutable collection of candidate planes, most inliers first."""

    def __init__(self, entries: Sequence[PlaneEntry] = ()):
        ents = sorted((PlaneEntry(*e) for e in entries), key=_rank_key)
        self._entries = tuple(ents)
        coeffs = np.array([e.plane.coeffs for e in ents], dtype=np.float64).reshape(-1, 4)
        coeffs.setflags(write=False)
        self._coeffs = coeffs

    @property
    def entries(self) -> tuple:
        return self._entries

    @property
    def coefficients(self) -> np.ndarray:
        return self._coeffs

    @property
    def inlier_counts(self) -> np.ndarray:
        return np.array([e.inlier_count for e in self._entries], dtype=np.int64)

    def plane(self, k) -> Plane:
        return self._entries[k].plane

    def planes(self) -> list:
        return [e.plane for e in self._entries]

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self.planes())

    def __getitem__(self, k):
        return self._entries[k].plane

    def top_k(self, k: int) -> "PlaneDatabase":
        if k < 1:
            raise ValueError("k must be >= 1")
        db = PlaneDatabase.__new__(PlaneDatabase)
        db._entries = self._entries[:k]
        db._coeffs = self._coeffs[:k]
        return db

    def save(self, path):
        lines = [f"{DB_HEADER} count={len(self)}"]
        for e in self._entries:
            a, b, c, d = (format(float(v), ".17g") for v in e.plane.coeffs)
            lines.append(f"{a} {b} {c} {d} {e.inlier_count} {e.source_frame}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")

    @classmethod
    def load(cls, path) -> "PlaneDatabase":
        path = Path(path)
        text = path.read_text(encoding="ascii")
        lines = text.splitlines()
        if not lines or not lines[0].startswith(DB_HEADER):
            raise ParseError(f"missing '{DB_HEADER}' header", path=path, line=1)
        head = lines[0].split()
        try:
            count = int(head[2].removeprefix("count="))
        except (IndexError, ValueError):
            raise ParseError("malformed header, expected count=<K>", path=path, line=1)
        entries = []
        for no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            tok = line.split()
            if len(tok) != 6:
                raise ParseError(f"expected 6 fields, got {len(tok)}", path=path, line=no)
            try:
                coeffs = [float(t) for t in tok[:4]]
                n_in = int(tok[4])
                plane = Plane(coeffs)
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=no)
            entries.append(PlaneEntry(plane, n_in, tok[5]))
        if len(entries) != count:
            raise ParseError(f"header says {count} planes, found {len(entries)}", path=path)
        return cls(entries)


def is_ground_candidate(plane: Plane, up=CAMERA_UP, max_tilt_deg=90.0) -> bool:
    cos = float(plane.normal @ (np.asarray(up) / np.linalg.norm(up)))
    return cos > math.cos(math.radians(max_tilt_deg)) + 1e-12


def frame_seed(seed: int, frame_id: str) -> np.random.SeedSequence:
    """Per-frame RNG seed that depends on the frame id, not its position."""
    return np.random.SeedSequence([int(seed), zlib.crc32(str(frame_id).encode())])


def extract_planes(points, cfg: RansacConfig, rng, camera_center=np.zeros(3),
                   up=CAMERA_UP, max_tilt_deg=90.0) -> list:
    """Repeatedly fit a plane and drop its inliers until too few points remain.

    Returns ``[(plane, inlier_count)]``. Planes are oriented toward the camera;
    those that are not ground candidates are discarded (their inliers are still
    removed so the loop terminates).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rng = np.random.default_rng(rng)
    found = []
    while len(pts) >= cfg.min_points:
        try:
            plane, inliers = ransac_plane(pts, cfg, rng)
        except InsufficientPoints:
            break
        plane = plane.oriented_toward(camera_center)
        if is_ground_candidate(plane, up, max_tilt_deg):
            found.append((plane, len(inliers)))
        mask = np.ones(len(pts), dtype=bool)
        mask[inliers] = False
        pts = pts[mask]
    return found


def build_database(frames, cfg: RansacConfig = RansacConfig(), seed=0, threads=1,
                   up=CAMERA_UP, max_tilt_deg=90.0) -> PlaneDatabase:
    """Plane database from ``frames``.

    Each frame is ``(frame_id, cloud, P, seg)``; when ``seg`` is None the
    cloud is taken as already filtered to ground classes.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("at least one frame is required")

    def one(frame):
        fid, cloud, P, seg = frame
        if seg is not None:
            cloud = filter_by_semantics(cloud, P, seg)
        rng = np.random.default_rng(frame_seed(seed, fid))
        planes = extract_planes(cloud.points, cfg, rng, P.center, up, max_tilt_deg)
        return [PlaneEntry(p, n, str(fid)) for p, n in planes]

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, frames))
    else:
        parts = [one(f) for f in frames]
    return PlaneDatabase([e for part in parts for e in part])
