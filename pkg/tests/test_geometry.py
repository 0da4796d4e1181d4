import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpp.errors import (
    DegenerateConfiguration,
    IntersectionBehindCamera,
    RayParallelToPlane,
    SingularCamera,
)
from gpp.geometry import (
    CAMERA_UP,
    Cuboid3D,
    Plane,
    ProjectionMatrix,
    Ray,
    backproject,
    closest_point_on_normal_line,
    heading_of_yaw,
    intersect_ray_plane,
    project_to_plane,
    yaw_of_heading,
)
from gpp.synth import KITTI_P2

from conftest import random_rotation

finite = st.floats(-50, 50, allow_nan=False)
pixel = st.tuples(st.floats(0, 1242), st.floats(0, 375))


# --- camera ---------------------------------------------------------------

def test_kitti_camera_center_closed_form(camera):
    # P = K [I | t] with K upper triangular, so C = -t solved by back-substitution.
    f, cx, cy = 7.215377e2, 6.095593e2, 1.728540e2
    p4 = np.array([4.485728e1, 2.163791e-1, 2.745884e-3])
    tz = p4[2]
    ty = (p4[1] - cy * tz) / f
    tx = (p4[0] - cx * tz) / f
    np.testing.assert_allclose(camera.center, -np.array([tx, ty, tz]), rtol=0, atol=1e-15)
    np.testing.assert_allclose(camera.entries @ np.append(camera.center, 1.0), 0.0, atol=1e-12)


def test_canonical_camera():
    P = ProjectionMatrix.canonical()
    assert np.array_equal(P.center, np.zeros(3))
    np.testing.assert_allclose(P.project([2.0, -1.0, 4.0]), [0.5, -0.25])


@pytest.mark.parametrize("bad", [np.zeros((3, 4)), np.hstack([np.ones((3, 3)), np.ones((3, 1))])])
def test_singular_camera_rejected(bad):
    with pytest.raises(SingularCamera):
        ProjectionMatrix(bad)


def test_nonfinite_camera_rejected():
    P = np.array(KITTI_P2, dtype=float)
    P[0, 0] = np.nan
    with pytest.raises(SingularCamera):
        ProjectionMatrix(P)


@given(pixel, st.floats(0.5, 80))
def test_backprojected_ray_reprojects(camera, x, t):
    ray = backproject(camera, x)
    assert np.isclose(np.linalg.norm(ray.direction), 1.0)
    X = ray.at(t)
    assert camera.depth(X) > 0
    np.testing.assert_allclose(camera.project(X), x, atol=1e-7)


def test_ray_rejects_zero_direction():
    with pytest.raises(ValueError):
        Ray(np.zeros(3), np.zeros(3))


# --- planes ---------------------------------------------------------------

def test_plane_normalizes_and_orients():
    p = Plane([0.0, 2.0, 0.0, -3.3])
    np.testing.assert_allclose(p.coeffs, [0, 1, 0, -1.65])
    q = p.oriented_toward(np.zeros(3))
    np.testing.assert_allclose(q.coeffs, [0, -1, 0, 1.65])
    assert q.signed_distance(np.zeros(3)) == pytest.approx(1.65)
    assert p.same_surface(q)


def test_plane_rejects_zero_normal():
    with pytest.raises(ValueError):
        Plane([0, 0, 0, 1])


def test_intersection_hand_computed(road):
    ray = Ray(np.zeros(3), [0.0, 0.1, 1.0])
    np.testing.assert_allclose(intersect_ray_plane(ray, road), [0.0, 1.65, 16.5], atol=1e-12)


def test_intersection_parallel_and_behind(road):
    with pytest.raises(RayParallelToPlane):
        intersect_ray_plane(Ray(np.zeros(3), [0, 0, 1]), road)
    with pytest.raises(IntersectionBehindCamera):
        intersect_ray_plane(Ray(np.zeros(3), [0, -0.1, 1]), road)


@given(finite, finite, st.floats(0.5, 3), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_intersection_lies_on_plane_and_ray(x, z, h, tx, tz):
    plane = Plane.from_point_normal([0, h, 0], [tx, -1.0, tz]).oriented_toward(np.zeros(3))
    target = project_to_plane(plane, [x, h, z + 60])
    ray = Ray(np.zeros(3), target)
    X = intersect_ray_plane(ray, plane)
    assert abs(plane.signed_distance(X)) < 1e-9
    assert ray.distance_to(X) < 1e-9


def _skew_oracle(ray, plane, foot):
    """Golden-section search for the normal-line parameter closest to the ray."""
    n = plane.normal

    def f(s):
        return float(ray.distance_to(foot + s * n))

    lo, hi = -100.0, 100.0
    g = (math.sqrt(5) - 1) / 2
    a, b = hi - g * (hi - lo), lo + g * (hi - lo)
    fa, fb = f(a), f(b)
    for _ in range(200):
        if fa < fb:
            hi, b, fb = b, a, fa
            a = hi - g * (hi - lo)
            fa = f(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + g * (hi - lo)
            fb = f(b)
    return foot + 0.5 * (lo + hi) * n


@given(st.integers(0, 2**32 - 1))
def test_skew_line_point_matches_search(seed):
    rng = np.random.default_rng(seed)
    plane = Plane.from_point_normal([0, rng.uniform(1, 2), 0], [rng.normal(0, 0.05), -1, rng.normal(0, 0.05)])
    plane = plane.oriented_toward(np.zeros(3))
    foot = project_to_plane(plane, [rng.uniform(-10, 10), 0, rng.uniform(5, 40)])
    top = foot + rng.uniform(0.5, 3) * plane.normal + rng.normal(0, 0.2, 3)
    ray = Ray(rng.normal(0, 0.1, 3), top)
    X = closest_point_on_normal_line(ray, plane, foot)
    np.testing.assert_allclose(X, _skew_oracle(ray, plane, foot), atol=1e-6)
    # The common perpendicular is orthogonal to both lines.
    perp = X - ray.origin
    perp = perp - (perp @ ray.direction) * ray.direction
    assert abs(perp @ plane.normal) < 1e-9


def test_skew_line_parallel_raises(road):
    with pytest.raises(DegenerateConfiguration):
        closest_point_on_normal_line(Ray(np.zeros(3), [0, 1, 0]), road, [0, 1.65, 5])


def test_skew_line_intersecting_case(road):
    # A ray passing exactly through the point 1.5 m above the foot.
    foot = np.array([1.0, 1.65, 10.0])
    top = foot + 1.5 * road.oriented_toward(np.zeros(3)).normal
    X = closest_point_on_normal_line(Ray(np.zeros(3), top), road.oriented_toward(np.zeros(3)), foot)
    np.testing.assert_allclose(X, top, atol=1e-12)


# --- cuboids ----------------------------------------------------------------

def test_kitti_cuboid_corners_hand_computed():
    c = Cuboid3D.from_kitti([0.0, 0.0, 10.0], (1.5, 1.6, 4.0), 0.0)
    expected_bottom = [[2, 0, 9.2], [2, 0, 10.8], [-2, 0, 10.8], [-2, 0, 9.2]]
    np.testing.assert_allclose(c.corners[:4], expected_bottom, atol=1e-12)
    np.testing.assert_allclose(c.corners[4:], np.array(expected_bottom) + [0, -1.5, 0], atol=1e-12)
    np.testing.assert_allclose(c.center, [0, -0.75, 10])
    np.testing.assert_allclose(c.lateral, [0, 0, 1], atol=1e-15)
    assert c.yaw == 0.0
    assert c.volume == pytest.approx(9.6)


def test_yaw_convention():
    np.testing.assert_allclose(heading_of_yaw(math.pi / 2), [0, 0, -1], atol=1e-15)
    assert yaw_of_heading([0, 0, 1]) == pytest.approx(-math.pi / 2)


@given(st.floats(-math.pi, math.pi - 1e-9))
def test_yaw_heading_round_trip(yaw):
    assert yaw_of_heading(heading_of_yaw(yaw)) == pytest.approx(yaw, abs=1e-12)


def test_cuboid_contains_and_distance():
    c = Cuboid3D.from_kitti([0.0, 0.0, 10.0], (1.5, 1.6, 4.0), 0.0)
    assert c.contains(c.center)
    assert not c.contains([3.0, -0.75, 10.0])
    assert c.distance_to_point([5.0, -0.75, 10.0]) == pytest.approx(3.0)
    assert c.distance_to_point([5.0, -0.75, 14.8]) == pytest.approx(5.0)
    assert c.distance_to_point(c.center) == 0.0


def test_cuboid_edges_have_box_lengths():
    c = Cuboid3D.from_kitti([1.0, 1.7, 20.0], (1.5, 1.6, 4.0), 0.7)
    lengths = sorted(round(float(np.linalg.norm(c.corners[i] - c.corners[j])), 9) for i, j in c.edges())
    assert lengths == [1.5] * 4 + [1.6] * 4 + [4.0] * 4


def test_cuboid_heading_parallel_to_up_raises():
    with pytest.raises(DegenerateConfiguration):
        Cuboid3D.from_pose(np.zeros(3), CAMERA_UP, CAMERA_UP, (1, 1, 1))


@given(st.floats(-math.pi, math.pi), st.floats(-20, 20), st.floats(3, 60))
def test_observation_angle_matches_kitti_formula(ry, x, z):
    c = Cuboid3D.from_kitti([x, 1.65, z], (1.5, 1.6, 4.0), ry)
    expected = (ry - math.atan2(x, z) + math.pi) % (2 * math.pi) - math.pi
    got = c.observation_angle()
    d = (got - expected + math.pi) % (2 * math.pi) - math.pi
    assert abs(d) < 1e-9


@given(st.integers(0, 2**32 - 1))
def test_cuboid_is_rigid_under_any_up(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    c = Cuboid3D.from_pose(rng.normal(size=3), R[0], R[1], (1.2, 1.8, 4.5))
    q = c.to_local(c.corners)
    np.testing.assert_allclose(np.abs(q), np.tile([2.25, 0.6, 0.9], (8, 1)), atol=1e-9)
    np.testing.assert_allclose(c.center - c.bottom_center, 0.6 * c.up, atol=1e-12)
