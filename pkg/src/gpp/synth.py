"""Synthetic road scenes with known ground truth.

A scene is a piecewise-planar ground layout (road segments with changing
grade plus raised sidewalks), a KITTI-like camera, and cars resting on the
road. Detections are produced by projecting the true box corners, then
optionally corrupted by keypoint, dimension and orientation noise. The same
layouts also yield labeled LiDAR-style point clouds for building a plane
database.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoding import Dimensions3D, OrientationClass, yaw_bin, yaw_to_class
from .geometry import Cuboid3D, Plane, ProjectionMatrix, heading_of_yaw
from .planes import LabeledCloud, SemanticMap
from .solver import Detection

KITTI_P2 = np.array(
    [
        [7.215377e02, 0.0, 6.095593e02, 4.485728e01],
        [0.0, 7.215377e02, 1.728540e02, 2.163791e-01],
        [0.0, 0.0, 1.0, 2.745884e-03],
    ]
)
IMAGE_SIZE = (1242, 375)  # width, height
CLASS_TABLE = {0: "unlabeled", 1: "road", 2: "sidewalk", 3: "building", 4: "car"}

# Bottom-corner index of the corner nearest the camera, per yaw bin.
_NEAREST = (2, 3, 0, 1)
_LENGTH_NEIGHBOR = {0: 3, 3: 0, 1: 2, 2: 1}
_WIDTH_NEIGHBOR = {0: 1, 1: 0, 2: 3, 3: 2}


@dataclass(frozen=True)
class NoiseModel:
    keypoint_sigma: float = 2.0
    dims_sigma: float = 0.05
    flip_prob: float = 0.01

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class GroundPatch:
    plane: Plane
    x_range: tuple
    z_range: tuple
    label: int

    def height_at(self, x, z):
        """Y coordinate of the patch surface at (x, z)."""
        a, b, c, d = self.plane.coeffs
        return -(a * np.asarray(x) + c * np.asarray(z) + d) / b

    def contains(self, x, z) -> bool:
        return self.x_range[0] <= x <= self.x_range[1] and self.z_range[0] <= z <= self.z_range[1]


def _plane_y(q, s, y0, z0):
    """Plane Y = y0 + s (Z - z0) + q X, oriented toward the origin."""
    return Plane([q, -1.0, s, y0 - s * z0]).oriented_toward(np.zeros(3))


def sample_layout(rng) -> list:
    """Road split into grade segments plus a raised sidewalk on each side."""
    h0 = float(np.clip(rng.normal(1.65, 0.06), 1.45, 1.85))
    roll = math.tan(math.radians(rng.normal(0.0, 1.0)))
    slope = math.tan(math.radians(rng.normal(0.0, 1.0)))
    half = float(rng.uniform(3.5, 5.0))
    breaks = [0.0, 12.0 + rng.uniform(-2, 2), 24.0 + rng.uniform(-3, 3), 36.0 + rng.uniform(-3, 3), 60.0]
    patches = []
    y = h0
    for zs, ze in zip(breaks[:-1], breaks[1:]):
        slope_i = slope + math.tan(math.radians(rng.normal(0.0, 0.6)))
        patches.append(GroundPatch(_plane_y(roll, -slope_i, y, zs), (-half, half), (zs, ze), 1))
        y = y - slope_i * (ze - zs)
    mean_slope = -(y - h0) / breaks[-1]
    for side in (-1, 1):
        curb = float(rng.uniform(0.1, 0.2))
        q_side = roll + math.tan(math.radians(rng.normal(0.0, 1.5)))
        x_edge = side * half
        y_edge = h0 + roll * x_edge - curb
        plane = Plane([q_side, -1.0, -mean_slope, y_edge - q_side * x_edge])
        xr = (x_edge, x_edge + side * 3.0)
        patches.append(GroundPatch(plane.oriented_toward(np.zeros(3)), tuple(sorted(xr)),
                                   (breaks[0], breaks[-1]), 2))
    return patches


def layout_cloud(layout, rng, n_ground=1000, n_other=300, sigma=0.005) -> LabeledCloud:
    """Labeled points on the layout surfaces plus off-ground clutter."""
    areas = np.array([(p.x_range[1] - p.x_range[0]) * (p.z_range[1] - p.z_range[0]) for p in layout])
    weights = np.sqrt(areas) / np.sqrt(areas).sum()
    counts = rng.multinomial(n_ground, weights)
    pts, labels = [], []
    for patch, n in zip(layout, counts):
        zlo = max(patch.z_range[0], 4.0)
        # Denser near the sensor, as in a spinning LiDAR sweep.
        z = np.exp(rng.uniform(np.log(zlo), np.log(patch.z_range[1]), n))
        x = rng.uniform(*patch.x_range, n)
        y = patch.height_at(x, z)
        p = np.column_stack([x, y, z])
        p += rng.normal(0.0, sigma, size=p.shape) * patch.plane.normal
        pts.append(p)
        labels.append(np.full(n, patch.label))
    side = rng.choice([-1.0, 1.0], n_other)
    xw = side * rng.uniform(9.0, 10.0, n_other)
    zw = rng.uniform(6.0, 45.0, n_other)
    yw = layout[0].height_at(0.0, zw) - rng.uniform(0.5, 3.0, n_other)
    pts.append(np.column_stack([xw, yw, zw]))
    labels.append(np.full(n_other, 3))
    return LabeledCloud(np.vstack(pts), np.concatenate(labels))


def render_semantic_map(cloud: LabeledCloud, P: ProjectionMatrix, size=IMAGE_SIZE) -> SemanticMap:
    """Rasterize point labels; nearer points win shared pixels."""
    w, h = size
    raster = np.zeros((h, w), dtype=np.uint8)
    depth = P.depth(cloud.points)
    front = depth > 0
    uv = np.floor(P.project(cloud.points[front])).astype(int)
    lab = cloud.labels[front]
    dep = depth[front]
    inside = (uv[:, 0] >= 0) & (uv[:, 0] < w) & (uv[:, 1] >= 0) & (uv[:, 1] < h)
    order = np.argsort(-dep[inside])
    uv, lab = uv[inside][order], lab[inside][order]
    raster[uv[:, 1], uv[:, 0]] = lab
    return SemanticMap(raster, dict(CLASS_TABLE))


def visible_keypoint_corners(cuboid: Cuboid3D, P: ProjectionMatrix) -> tuple:
    """Corner indices (left, middle, right, top) from depth and image order.

    The middle corner is the bottom corner nearest the camera center, left and
    right are its two bottom neighbors ordered by image x, top sits above the
    middle corner.
    """
    bottom = cuboid.corners[:4]
    m = int(np.argmin(np.linalg.norm(bottom - P.center, axis=1)))
    a, b = (m + 1) % 4, (m + 3) % 4
    ua, ub = P.project(bottom[[a, b]])[:, 0]
    left, right = (a, b) if ua < ub else (b, a)
    return left, m, right, m + 4


def class_keypoint_corners(k: int, left_is_length: bool) -> tuple:
    m = _NEAREST[k]
    ln, wn = _LENGTH_NEIGHBOR[m], _WIDTH_NEIGHBOR[m]
    left, right = (ln, wn) if left_is_length else (wn, ln)
    return left, m, right, m + 4


def clean_detection(cuboid: Cuboid3D, P: ProjectionMatrix, score=1.0, class_id=0):
    """Noiseless detection of ``cuboid``; ``None`` if the visibility rules and
    the orientation class disagree (very close, oblique views)."""
    corners = visible_keypoint_corners(cuboid, P)
    uv = P.project(cuboid.corners)
    kps = uv[list(corners)]
    box = np.array([uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max()])
    alpha = cuboid.observation_angle(P.center)
    orient = yaw_to_class(alpha, kps[1, 0], 0.5 * (box[0] + box[2]))
    if class_keypoint_corners(orient.yaw_bin, orient.left_is_length) != corners:
        return None
    h, w, l = cuboid.dims
    return Detection(box, kps, orient, Dimensions3D(h, w, l), score, class_id)


def perturb_detection(d: Detection, noise: NoiseModel, rng) -> Detection:
    kps = d.keypoints + rng.normal(0.0, noise.keypoint_sigma, size=(4, 2)) if noise.keypoint_sigma else d.keypoints
    box = d.box2d + rng.normal(0.0, noise.keypoint_sigma, size=4) if noise.keypoint_sigma else d.box2d
    box = np.array([min(box[0], box[2]), min(box[1], box[3]), max(box[0], box[2]), max(box[1], box[3])])
    dims = np.array(d.dims.as_tuple())
    if noise.dims_sigma:
        dims = np.maximum(dims + rng.normal(0.0, noise.dims_sigma, size=3), 0.1)
    orient = d.orientation
    if noise.flip_prob and rng.random() < noise.flip_prob:
        orient = orient.mirrored()
    orient = OrientationClass(orient.yaw_bin, 0 if kps[1, 0] <= 0.5 * (box[0] + box[2]) else 1)
    return Detection(box, kps, orient, Dimensions3D(*dims), d.score, d.class_id)


@dataclass(frozen=True, eq=False)
class SynthObject:
    cuboid: Cuboid3D
    plane: Plane
    clean: Detection
    detection: Detection

    @property
    def alpha(self) -> float:
        """KITTI observation angle, relative to the rectified frame origin."""
        return self.cuboid.observation_angle(np.zeros(3))


@dataclass(frozen=True, eq=False)
class SynthScene:
    camera: ProjectionMatrix
    layout: list
    objects: list
    noise: NoiseModel = field(default_factory=NoiseModel)

    @property
    def plane(self) -> Plane:
        return self.objects[0].plane

    @property
    def detections(self) -> list:
        return [o.detection for o in self.objects]


def _sample_dims(rng):
    h = float(np.clip(rng.normal(1.53, 0.10), 1.3, 1.9))
    w = float(np.clip(rng.normal(1.63, 0.10), 1.4, 1.9))
    l = float(np.clip(rng.normal(3.88, 0.35), 3.2, 4.8))
    return h, w, l


def _near_bin_boundary(alpha, margin) -> bool:
    k = yaw_bin(alpha)
    lo = -math.pi + k * math.pi / 2
    return alpha - lo < margin or lo + math.pi / 2 - alpha < margin


def sample_object(layout, P: ProjectionMatrix, rng, size=IMAGE_SIZE, max_tries=1000,
                  z_range=(6.0, 45.0), boundary_margin=math.radians(1.0)):
    """A car on a road patch, fully visible, with unambiguous keypoints."""
    roads = [p for p in layout if p.label == 1]
    w, h = size
    for _ in range(max_tries):
        z = float(rng.uniform(*z_range))
        patch = next((p for p in roads if p.z_range[0] <= z < p.z_range[1]), roads[-1])
        x = float(rng.uniform(patch.x_range[0] + 1.0, patch.x_range[1] - 1.0))
        y = float(patch.height_at(x, z))
        yaw = float(rng.uniform(-math.pi, math.pi))
        cub = Cuboid3D.from_pose([x, y, z], heading_of_yaw(yaw), patch.plane.normal, _sample_dims(rng))
        if np.any(P.depth(cub.corners) < 1.0):
            continue
        uv = P.project(cub.corners)
        if uv[:, 0].min() < 0 or uv[:, 0].max() >= w or uv[:, 1].min() < 0 or uv[:, 1].max() >= h:
            continue
        if _near_bin_boundary(cub.observation_angle(P.center), boundary_margin):
            continue
        det = clean_detection(cub, P)
        if det is None:
            continue
        return cub, patch.plane, det
    raise RuntimeError("could not place an object in view")


def generate_scene(rng, P: ProjectionMatrix | None = None, n_objects=1,
                   noise: NoiseModel = NoiseModel(), layout=None) -> SynthScene:
    P = P or ProjectionMatrix(KITTI_P2)
    layout = layout or sample_layout(rng)
    objs = []
    for _ in range(n_objects):
        cub, plane, det = sample_object(layout, P, rng)
        noisy = perturb_detection(det, noise, rng)
        objs.append(SynthObject(cub, plane, det, noisy))
    return SynthScene(P, layout, objs, noise)


def generate_scenes(seed, n_scenes, noise: NoiseModel = NoiseModel(), n_objects=1, P=None) -> list:
    rng = np.random.default_rng(seed)
    return [generate_scene(rng, P, n_objects, noise) for _ in range(n_scenes)]


def generate_frames(seed, n_frames, P=None, n_ground=1000, n_other=300):
    """``(frame_id, cloud, P, semantic_map)`` tuples for database building."""
    P = P or ProjectionMatrix(KITTI_P2)
    rng = np.random.default_rng(seed)
    frames = []
    for i in range(n_frames):
        layout = sample_layout(rng)
        cloud = layout_cloud(layout, rng, n_ground, n_other)
        frames.append((f"{i:06d}", cloud, P, render_semantic_map(cloud, P)))
    return frames


def label_for(obj: SynthObject, P: ProjectionMatrix):
    from .kitti_io import ObjectLabel

    c = obj.cuboid
    return ObjectLabel(
        type="Car",
        truncated=0.0,
        occluded=0,
        alpha=obj.alpha,
        bbox=tuple(float(v) for v in obj.clean.box2d),
        dims=tuple(c.dims),
        location=tuple(float(v) for v in c.bottom_center),
        rotation_y=c.yaw,
    )
