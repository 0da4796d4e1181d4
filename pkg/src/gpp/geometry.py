"""Camera and plane primitives: projection, backprojected rays, ray/plane
intersection, the skew-line closest point used for the top keypoint, and the
oriented cuboid type shared by the solver and the metrics.

Conventions follow the KITTI camera frame: X right, Y down, Z forward, so the
physical "up" direction is -Y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConfiguration,
    IntersectionBehindCamera,
    RayParallelToPlane,
    SingularCamera,
)

PARALLEL_EPS = 1e-9
CAMERA_UP = np.array([0.0, -1.0, 0.0])


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """3x4 perspective camera ``P = [M | p4]`` mapping meters to pixels."""

    entries: np.ndarray
    center: np.ndarray = field(init=False, repr=False)
    m_inverse: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = np.asarray(self.entries, dtype=np.float64).reshape(3, 4)
        if not np.all(np.isfinite(P)):
            raise SingularCamera("projection matrix has non-finite entries")
        M = P[:, :3]
        scale = np.linalg.norm(M)
        if abs(np.linalg.det(M)) <= 1e-9 * scale**3:
            raise SingularCamera("left 3x3 block of P is not invertible")
        m_inv = np.linalg.inv(M)
        P.setflags(write=False)
        m_inv.setflags(write=False)
        center = -m_inv @ P[:, 3]
        center.setflags(write=False)
        object.__setattr__(self, "entries", P)
        object.__setattr__(self, "m_inverse", m_inv)
        object.__setattr__(self, "center", center)

    @classmethod
    def canonical(cls) -> "ProjectionMatrix":
        return cls(np.hstack([np.eye(3), np.zeros((3, 1))]))

    @property
    def M(self) -> np.ndarray:
        return self.entries[:, :3]

    def project(self, X) -> np.ndarray:
        """Project (N, 3) or (3,) points to pixels."""
        X = np.asarray(X, dtype=np.float64)
        h = X @ self.M.T + self.entries[:, 3]
        return h[..., :2] / h[..., 2:3]

    def depth(self, X) -> np.ndarray:
        """Third homogeneous coordinate; positive for points in front."""
        X = np.asarray(X, dtype=np.float64)
        return X @ self.entries[2, :3] + self.entries[2, 3]

    def directions(self, pixels) -> np.ndarray:
        """Unit ray directions for (N, 2) or (2,) pixel coordinates."""
        px = np.asarray(pixels, dtype=np.float64)
        h = np.concatenate([px, np.ones(px.shape[:-1] + (1,))], axis=-1)
        d = h @ self.m_inverse.T
        # Orient so the ray points to positive depth.
        sign = np.sign(d @ self.entries[2, :3])
        d = d * np.where(sign == 0, 1.0, sign)[..., None]
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def __eq__(self, other):
        if not isinstance(other, ProjectionMatrix):
            return NotImplemented
        return bool(np.array_equal(self.entries, other.entries))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if not np.isfinite(n) or n == 0:
            raise ValueError("ray direction must be a nonzero finite vector")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d / n)

    def at(self, t) -> np.ndarray:
        return self.origin + np.multiply.outer(t, self.direction)

    def distance_to(self, X) -> np.ndarray:
        """Distance from point(s) to the infinite line carrying the ray."""
        v = np.asarray(X, dtype=np.float64) - self.origin
        return np.linalg.norm(np.cross(v, self.direction), axis=-1)


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane ``a X + b Y + c Z + d = 0`` with unit normal (a, b, c)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.float64).reshape(4)
        n = np.linalg.norm(c[:3])
        if not np.isfinite(n) or n == 0:
            raise ValueError("plane normal must be a nonzero finite vector")
        c = c / n
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_point_normal(cls, point, normal) -> "Plane":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return cls(np.append(n, -n @ np.asarray(point, dtype=np.float64)))

    @property
    def normal(self) -> np.ndarray:
        return self.coeffs[:3]

    @property
    def offset(self) -> float:
        return float(self.coeffs[3])

    def signed_distance(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.normal + self.offset

    def oriented_toward(self, point) -> "Plane":
        """Flip so that ``point`` has positive signed distance (when nonzero)."""
        if self.signed_distance(point) < 0:
            return Plane(-self.coeffs)
        return self

    def same_surface(self, other: "Plane", atol=1e-9) -> bool:
        return bool(
            np.allclose(self.coeffs, other.coeffs, atol=atol)
            or np.allclose(self.coeffs, -other.coeffs, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, Plane):
            return NotImplemented
        return bool(np.array_equal(self.coeffs, other.coeffs))

    __hash__ = None


def backproject(P: ProjectionMatrix, x) -> Ray:
    """Ray from the camera center through pixel ``x``.

    Uses ``origin = -M^-1 p4`` and ``direction ~ M^-1 [x, y, 1]``, which spans
    the same line as the pseudo-inverse construction ``P^+ [x, y, 1]``.
    """
    return Ray(P.center, P.directions(np.asarray(x, dtype=np.float64)))


def intersect_ray_plane(ray: Ray, plane: Plane) -> np.ndarray:
    denom = plane.normal @ ray.direction
    if abs(denom) <= PARALLEL_EPS:
        raise RayParallelToPlane(f"|n . r| = {abs(denom):.3g}")
    t = -plane.signed_distance(ray.origin) / denom
    if not t > 0:
        raise IntersectionBehindCamera(f"ray parameter t = {t:.6g}")
    return ray.origin + t * ray.direction


def closest_point_on_normal_line(ray: Ray, plane: Plane, foot) -> np.ndarray:
    """Point on the line ``foot + s n`` closest to ``ray``.

    The line along the plane normal and the ray are generally skew; this
    returns the foot of their common perpendicular on the normal line.
    """
    n = plane.normal
    r = ray.direction
    cos = n @ r
    sin2 = 1.0 - cos * cos
    if sin2 <= PARALLEL_EPS**2:
        raise DegenerateConfiguration("ray is parallel to the plane normal")
    w = np.asarray(foot, dtype=np.float64) - ray.origin
    s = (cos * (r @ w) - n @ w) / sin2
    return foot + s * n


def project_to_plane(plane: Plane, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X - np.multiply.outer(plane.signed_distance(X), plane.normal)


# Bottom-face corners in the object frame (x along length, z along width),
# counter-clockwise seen from above, starting at front-right.
_LOCAL_FOOTPRINT = np.array(
    [[0.5, -0.5], [0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5]]
)


def yaw_of_heading(heading) -> float:
    """Rotation about the camera Y axis, KITTI ``rotation_y`` convention."""
    h = np.asarray(heading, dtype=np.float64)
    return float(np.arctan2(-h[2], h[0]))


def heading_of_yaw(yaw: float) -> np.ndarray:
    return np.array([np.cos(yaw), 0.0, -np.sin(yaw)])


@dataclass(frozen=True, eq=False)
class Cuboid3D:
    """Oriented 3D box resting on a surface with normal ``up``.

    ``corners`` holds the bottom face counter-clockwise seen from above
    (front-right first), followed by the top face in the same order.
    ``dims`` is (h, w, l).
    """

    corners: np.ndarray
    center: np.ndarray
    yaw: float
    dims: tuple
    up: np.ndarray
    heading: np.ndarray

    @classmethod
    def from_pose(cls, bottom_center, heading, up, dims) -> "Cuboid3D":
        h, w, l = (float(v) for v in dims)
        up = np.asarray(up, dtype=np.float64)
        up = up / np.linalg.norm(up)
        x = np.asarray(heading, dtype=np.float64)
        x = x - (x @ up) * up
        norm = np.linalg.norm(x)
        if norm < 1e-12:
            raise DegenerateConfiguration("heading is parallel to up")
        x = x / norm
        z = np.cross(up, x)
        base = np.asarray(bottom_center, dtype=np.float64)
        offsets = _LOCAL_FOOTPRINT[:, :1] * l * x + _LOCAL_FOOTPRINT[:, 1:] * w * z
        bottom = base + offsets
        corners = np.vstack([bottom, bottom + h * up])
        for arr in (corners, up, x):
            arr.setflags(write=False)
        center = base + 0.5 * h * up
        center.setflags(write=False)
        return cls(corners, center, yaw_of_heading(x), (h, w, l), up, x)

    @classmethod
    def from_kitti(cls, location, dims, rotation_y) -> "Cuboid3D":
        """KITTI label convention: ``location`` is the bottom-face center."""
        return cls.from_pose(location, heading_of_yaw(rotation_y), CAMERA_UP, dims)

    @property
    def bottom_center(self) -> np.ndarray:
        return self.center - 0.5 * self.dims[0] * self.up

    @property
    def lateral(self) -> np.ndarray:
        return np.cross(self.up, self.heading)

    @property
    def volume(self) -> float:
        h, w, l = self.dims
        return h * w * l

    def to_local(self, X) -> np.ndarray:
        """Coordinates in the (heading, up, lateral) frame centered at ``center``."""
        v = np.asarray(X, dtype=np.float64) - self.center
        return np.stack([v @ self.heading, v @ self.up, v @ self.lateral], axis=-1)

    def contains(self, X) -> np.ndarray:
        h, w, l = self.dims
        q = self.to_local(X)
        return (
            (np.abs(q[..., 0]) <= 0.5 * l)
            & (np.abs(q[..., 1]) <= 0.5 * h)
            & (np.abs(q[..., 2]) <= 0.5 * w)
        )

    def distance_to_point(self, X) -> np.ndarray:
        """Euclidean distance from point(s) to the solid box (0 inside)."""
        h, w, l = self.dims
        q = np.abs(self.to_local(X)) - 0.5 * np.array([l, h, w])
        return np.linalg.norm(np.maximum(q, 0.0), axis=-1)

    def edges(self) -> list:
        """The 12 edges as (i, j) corner-index pairs."""
        ring = [(0, 1), (1, 2), (2, 3), (3, 0)]
        return ring + [(i + 4, j + 4) for i, j in ring] + [(i, i + 4) for i in range(4)]

    def observation_angle(self, camera_center=np.zeros(3)) -> float:
        """Viewpoint-relative yaw (KITTI ``alpha``) measured in the box's ground plane.

        For a level box this equals ``rotation_y - atan2(x, z)``.
        """
        v = np.asarray(camera_center, dtype=np.float64) - self.bottom_center
        return float(np.arctan2(v @ self.heading, -(v @ self.lateral)))
