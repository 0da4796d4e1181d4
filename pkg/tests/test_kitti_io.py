import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpp import kitti_io as kio
from gpp.errors import ParseError
from gpp.planes import SemanticMap
from gpp.synth import NoiseModel, generate_scenes

CALIB = """P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
"""

LABEL = "Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01"


def test_parse_calib(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text(CALIB)
    c = kio.parse_calib(p)
    assert set(c) == {"P0", "P2", "R0_rect", "Tr_velo_to_cam"}
    P = c.projection("P2")
    assert P.entries[0, 3] == 44.85728
    with pytest.raises(KeyError):
        c.projection("P3")


def test_velo_to_camera_hand_computed(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text(CALIB)
    c = kio.parse_calib(p)
    # LiDAR x is forward: a point 10 m ahead lands near camera z = 10 - 0.27.
    X = kio.velo_to_camera([[10.0, 0.0, 0.0]], c)[0]
    tr = c["Tr_velo_to_cam"].reshape(3, 4)
    R0 = c["R0_rect"].reshape(3, 3)
    np.testing.assert_allclose(X, R0 @ (tr[:, 0] * 10 + tr[:, 3]), atol=1e-12)
    assert X[2] == pytest.approx(9.73, abs=0.02)


def test_calib_round_trip(tmp_path, camera):
    kio.write_calib(tmp_path / "c.txt", {"P2": camera.entries})
    assert kio.parse_calib(tmp_path / "c.txt").projection() == camera


@pytest.mark.parametrize("text, line", [("P2 1 2 3\n", 1), ("P2: 1 2 3\n", 1), ("\nP2: 1 2 x 4 5 6 7 8 9 10 11 12\n", 2)])
def test_calib_errors(tmp_path, text, line):
    p = tmp_path / "c.txt"
    p.write_text(text)
    with pytest.raises(ParseError) as e:
        kio.parse_calib(p)
    assert e.value.line == line


def test_parse_label_line():
    lab = kio.parse_label_line(LABEL)
    assert lab.type == "Pedestrian" and lab.occluded == 0
    assert lab.bbox == (712.40, 143.00, 810.73, 307.92)
    assert lab.dims == (1.89, 0.48, 1.20)
    assert lab.location == (1.84, 1.47, 8.41)
    assert lab.rotation_y == 0.01 and lab.score is None
    c = lab.cuboid()
    np.testing.assert_allclose(c.bottom_center, lab.location)
    assert c.center[1] == pytest.approx(1.47 - 0.945)
    assert kio.parse_label_line(LABEL + " 0.9").score == 0.9


@pytest.mark.parametrize("line", ["Car 0 0 0", LABEL.replace("0.48", "abc"), LABEL.replace(" 0 -0.20", " 0.5 -0.20"),
                                  LABEL.replace("1.89", "0")])
def test_label_errors(line):
    with pytest.raises(ParseError):
        kio.parse_label_line(line, path="x", no=3)


def test_labels_round_trip(tmp_path):
    labs = [kio.parse_label_line(LABEL), kio.parse_label_line(LABEL + " 0.5")]
    kio.write_labels(tmp_path / "l.txt", labs)
    assert kio.parse_labels(tmp_path / "l.txt") == labs


def test_cloud_round_trip_and_errors(tmp_path):
    pts = np.array([[1.5, -2.25, 3.0], [0.0, 0.0, 1e3]])
    kio.write_cloud(tmp_path / "a.bin", pts)
    assert (tmp_path / "a.bin").stat().st_size == 32
    np.testing.assert_array_equal(kio.read_cloud(tmp_path / "a.bin").points, pts)
    (tmp_path / "b.bin").write_bytes((tmp_path / "a.bin").read_bytes() + b"\0" * 5)
    with pytest.raises(ParseError) as e:
        kio.read_cloud(tmp_path / "b.bin")
    assert e.value.offset == 32
    rec = np.array([[0, 0, 0, 0], [np.nan, 0, 0, 0]], dtype="<f4")
    (tmp_path / "c.bin").write_bytes(rec.tobytes())
    with pytest.raises(ParseError) as e:
        kio.read_cloud(tmp_path / "c.bin")
    assert e.value.offset == 16


@pytest.mark.parametrize("suffix", [".png", ".raw"])
def test_semantic_map_round_trip(tmp_path, suffix):
    raster = (np.arange(35).reshape(5, 7) % 4).astype(np.uint8)
    table = {0: "unlabeled", 1: "road", 2: "sidewalk", 3: "building"}
    kio.write_class_table(tmp_path / "classes.txt", table)
    kio.write_semantic_map(tmp_path / f"s{suffix}", SemanticMap(raster, table))
    seg = kio.read_semantic_map(tmp_path / f"s{suffix}", tmp_path / "classes.txt")
    np.testing.assert_array_equal(seg.raster, raster)
    assert seg.classes == table and (seg.width, seg.height) == (7, 5)


def test_semantic_map_errors(tmp_path):
    from PIL import Image

    Image.new("RGB", (4, 4)).save(tmp_path / "rgb.png")
    with pytest.raises(ParseError):
        kio.read_semantic_map(tmp_path / "rgb.png", {})
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(ParseError):
        kio.read_semantic_map(tmp_path / "bad.png", {})
    (tmp_path / "short.raw").write_bytes(np.array([4, 4], dtype="<u4").tobytes() + b"\0" * 10)
    with pytest.raises(ParseError) as e:
        kio.read_semantic_map(tmp_path / "short.raw", {})
    assert e.value.offset == 18
    (tmp_path / "t.txt").write_text("zero road\n")
    with pytest.raises(ParseError):
        kio.read_class_table(tmp_path / "t.txt")


def test_detections_round_trip(tmp_path):
    dets = [s.detections[0] for s in generate_scenes(0, 5, NoiseModel())]
    kio.write_detections(tmp_path / "d.txt", dets)
    back = kio.read_detections(tmp_path / "d.txt")
    for a, b in zip(dets, back):
        assert np.array_equal(a.box2d, b.box2d) and np.array_equal(a.keypoints, b.keypoints)
        assert (a.orientation, a.dims, a.score, a.class_id) == (b.orientation, b.dims, b.score, b.class_id)
    assert len(kio.detection_to_line(dets[0]).split()) == 18


@pytest.mark.parametrize("mutate", [lambda t: t[:-1], lambda t: t[:14] + ["9"] + t[15:],
                                    lambda t: t[:1] + ["x"] + t[2:], lambda t: t[:15] + ["0"] + t[16:],
                                    lambda t: t[:1] + ["2.0"] + t[2:]])
def test_detection_errors(mutate):
    d = generate_scenes(0, 1, NoiseModel())[0].detections[0]
    tok = kio.detection_to_line(d).split()
    with pytest.raises(ParseError):
        kio.parse_detection_line(" ".join(mutate(tok)))


def test_results_round_trip(tmp_path, clean_scenes):
    from gpp.solver import poll_batch

    s = clean_scenes[0]
    res = poll_batch([s.objects[0].clean, s.objects[0].clean], [s.plane], s.camera) + [None]
    kio.write_results(tmp_path / "r.txt", res)
    back = kio.read_results(tmp_path / "r.txt")
    assert back[0] == kio.ResultRecord.from_poll(res[0])
    assert back[2] == kio.infeasible_record() and not back[2].feasible
    np.testing.assert_allclose(back[0].cuboid().corners, res[0].cuboid.corners, atol=1e-12)
    assert len((tmp_path / "r.txt").read_text().splitlines()[0].split()) == 36


def test_results_errors(tmp_path):
    (tmp_path / "r.txt").write_text("1 2 3\n")
    with pytest.raises(ParseError):
        kio.read_results(tmp_path / "r.txt")
    (tmp_path / "u.txt").write_bytes(b"\xff\xfe")
    with pytest.raises(ParseError) as e:
        kio.read_results(tmp_path / "u.txt")
    assert e.value.offset == 0


@given(st.floats(allow_nan=False, allow_infinity=True))
def test_fmt_round_trips(x):
    assert float(kio.fmt(x)) == x
