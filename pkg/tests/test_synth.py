import numpy as np
import pytest

from gpp.planes import filter_by_semantics
from gpp.synth import (
    CLASS_TABLE,
    IMAGE_SIZE,
    NoiseModel,
    class_keypoint_corners,
    generate_frames,
    generate_scenes,
    label_for,
    visible_keypoint_corners,
)


def test_scenes_are_reproducible():
    a = generate_scenes(5, 10, NoiseModel())
    b = generate_scenes(5, 10, NoiseModel())
    for x, y in zip(a, b):
        assert np.array_equal(x.objects[0].cuboid.corners, y.objects[0].cuboid.corners)
        assert np.array_equal(x.detections[0].keypoints, y.detections[0].keypoints)


def test_cuboids_rest_on_true_plane_and_fit_in_image(clean_scenes):
    w, h = IMAGE_SIZE
    for s in clean_scenes:
        for o in s.objects:
            np.testing.assert_allclose(o.plane.signed_distance(o.cuboid.corners[:4]), 0.0, atol=1e-9)
            np.testing.assert_allclose(abs(o.cuboid.up @ o.plane.normal), 1.0, atol=1e-12)
            k = o.clean.keypoints
            assert np.all((k[:, 0] >= 0) & (k[:, 0] < w) & (k[:, 1] >= 0) & (k[:, 1] < h))


def test_zero_noise_detection_is_exact_projection(clean_scenes):
    for s in clean_scenes:
        o = s.objects[0]
        np.testing.assert_array_equal(o.detection.keypoints, o.clean.keypoints)
        idx = class_keypoint_corners(o.clean.orientation.yaw_bin, o.clean.orientation.left_is_length)
        np.testing.assert_allclose(o.clean.keypoints, s.camera.project(o.cuboid.corners[list(idx)]), atol=1e-9)


def _depth_order_oracle(cuboid, P):
    """Nearest bottom corner by depth; neighbors split by image x; top above."""
    bottom = cuboid.corners[:4]
    d = [float(np.linalg.norm(c - P.center)) for c in bottom]
    m = d.index(min(d))
    nbrs = [(m + 1) % 4, (m - 1) % 4]
    nbrs.sort(key=lambda i: P.project(bottom[i])[0])
    return nbrs[0], m, nbrs[1], m + 4


def test_keypoint_visibility_matches_depth_oracle():
    for s in generate_scenes(8, 200, NoiseModel.none()):
        o = s.objects[0]
        expected = _depth_order_oracle(o.cuboid, s.camera)
        assert visible_keypoint_corners(o.cuboid, s.camera) == expected
        ori = o.clean.orientation
        assert class_keypoint_corners(ori.yaw_bin, ori.left_is_length) == expected


def test_noise_changes_detections():
    for s in generate_scenes(9, 30, NoiseModel(keypoint_sigma=2.0, dims_sigma=0.05, flip_prob=1.0)):
        o = s.objects[0]
        assert o.detection.orientation.yaw_bin == o.clean.orientation.yaw_bin ^ 1
        assert not np.array_equal(o.detection.keypoints, o.clean.keypoints)
        assert o.detection.dims != o.clean.dims


def test_labels(clean_scenes):
    s = clean_scenes[0]
    o = s.objects[0]
    lab = label_for(o, s.camera)
    c = lab.cuboid()
    np.testing.assert_allclose(c.bottom_center, o.cuboid.bottom_center)
    assert lab.alpha == pytest.approx(o.alpha)
    assert lab.dims == o.cuboid.dims


def test_frames_have_ground_points():
    frames = generate_frames(0, 3)
    assert [f[0] for f in frames] == ["000000", "000001", "000002"]
    for fid, cloud, P, seg in frames:
        assert seg.classes == CLASS_TABLE
        assert (seg.width, seg.height) == IMAGE_SIZE
        kept = filter_by_semantics(cloud, P, seg)
        assert len(kept) > 500
        assert set(np.unique(kept.labels)) <= {1, 2}


def test_multiple_objects():
    s = generate_scenes(1, 1, NoiseModel(), n_objects=4)[0]
    assert len(s.objects) == 4 and len(s.detections) == 4
