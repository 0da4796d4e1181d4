"""Readers and writers for calibration files, object labels, LiDAR dumps,
semantic rasters, and the detection/result text files used by the CLI.

Text formats are whitespace separated with '.' decimals. Floats written by
this module use 17 significant digits so every value round-trips exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import Dimensions3D, OrientationClass
from .errors import ParseError
from .geometry import Cuboid3D, Plane, ProjectionMatrix
from .planes import LabeledCloud, SemanticMap
from .solver import Detection, PollResult

CLOUD_RECORD_BYTES = 16


def fmt(x) -> str:
    return format(float(x), ".17g")


def _floats(tokens, path, line):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"bad number: {exc}", path=path, line=line) from None


def _read_lines(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("not valid UTF-8 text", path=path, offset=exc.start) from None
    return path, text.splitlines()


# --- calibration -----------------------------------------------------------

class CalibFile(dict):
    """Named matrices from a calibration file, e.g. ``calib["P2"]``."""

    def projection(self, name="P2") -> ProjectionMatrix:
        if name not in self:
            raise KeyError(f"calibration has no entry {name!r}")
        v = self[name]
        if v.size != 12:
            raise ValueError(f"{name} has {v.size} values, expected 12")
        return ProjectionMatrix(v.reshape(3, 4))


def parse_calib(path) -> CalibFile:
    path, lines = _read_lines(path)
    calib = CalibFile()
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if ":" not in line:
            raise ParseError("expected 'NAME: values'", path=path, line=no)
        name, rest = line.split(":", 1)
        vals = np.array(_floats(rest.split(), path, no))
        if name.startswith("P") and vals.size != 12:
            raise ParseError(f"{name} needs 12 values, got {vals.size}", path=path, line=no)
        calib[name.strip()] = vals
    return calib


def write_calib(path, calib: dict):
    lines = [f"{name}: " + " ".join(fmt(v) for v in np.ravel(vals)) for name, vals in calib.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def velo_to_camera(points, calib: CalibFile) -> np.ndarray:
    """LiDAR points to the rectified camera frame via Tr_velo_to_cam and R0_rect."""
    pts = np.asarray(points, dtype=np.float64)[:, :3]
    tr = calib["Tr_velo_to_cam"].reshape(3, 4)
    out = pts @ tr[:, :3].T + tr[:, 3]
    if "R0_rect" in calib:
        out = out @ calib["R0_rect"].reshape(3, 3).T
    return out


# --- object labels ---------------------------------------------------------

@dataclass(frozen=True)
class ObjectLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple
    dims: tuple  # (h, w, l)
    location: tuple
    rotation_y: float
    score: float | None = None

    def cuboid(self) -> Cuboid3D:
        return Cuboid3D.from_kitti(self.location, self.dims, self.rotation_y)

    def to_line(self) -> str:
        vals = [self.truncated, self.occluded, self.alpha, *self.bbox, *self.dims,
                *self.location, self.rotation_y]
        parts = [self.type, fmt(vals[0]), str(int(vals[1]))] + [fmt(v) for v in vals[2:]]
        if self.score is not None:
            parts.append(fmt(self.score))
        return " ".join(parts)


def parse_label_line(line: str, path=None, no=None) -> ObjectLabel:
    tok = line.split()
    if len(tok) not in (15, 16):
        raise ParseError(f"expected 15 or 16 fields, got {len(tok)}", path=path, line=no)
    v = _floats(tok[1:], path, no)
    if v[1] != int(v[1]):
        raise ParseError("occlusion must be an integer", path=path, line=no)
    lab = ObjectLabel(
        type=tok[0],
        truncated=v[0],
        occluded=int(v[1]),
        alpha=v[2],
        bbox=tuple(v[3:7]),
        dims=tuple(v[7:10]),
        location=tuple(v[10:13]),
        rotation_y=v[13],
        score=v[14] if len(v) == 15 else None,
    )
    if lab.type != "DontCare" and min(lab.dims) <= 0:
        raise ParseError("non-positive object dimensions", path=path, line=no)
    return lab


def parse_labels(path) -> list:
    path, lines = _read_lines(path)
    return [parse_label_line(l, path, no) for no, l in enumerate(lines, start=1) if l.strip()]


def write_labels(path, labels):
    Path(path).write_text("".join(l.to_line() + "\n" for l in labels), encoding="utf-8")


# --- point clouds and semantic maps -----------------------------------------

def read_cloud(path) -> LabeledCloud:
    """Little-endian float32 (x, y, z, reflectance) records; reflectance dropped."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % CLOUD_RECORD_BYTES:
        bad = len(raw) - len(raw) % CLOUD_RECORD_BYTES
        raise ParseError("truncated point record", path=path, offset=bad)
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    finite = np.all(np.isfinite(arr[:, :3]), axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0]) * CLOUD_RECORD_BYTES
        raise ParseError("non-finite coordinate", path=path, offset=bad)
    return LabeledCloud(arr[:, :3].astype(np.float64))


def write_cloud(path, points, reflectance=None):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    refl = np.zeros(len(pts)) if reflectance is None else np.asarray(reflectance)
    rec = np.column_stack([pts, refl]).astype("<f4")
    Path(path).write_bytes(rec.tobytes())


def read_class_table(path) -> dict:
    path, lines = _read_lines(path)
    table = {}
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 2 or not tok[0].isdigit():
            raise ParseError("expected 'class_id name'", path=path, line=no)
        table[int(tok[0])] = tok[1]
    return table


def write_class_table(path, table: dict):
    Path(path).write_text("".join(f"{k} {v}\n" for k, v in sorted(table.items())), encoding="utf-8")


def read_semantic_map(path, mapping) -> SemanticMap:
    """8-bit class raster (PNG, or raw: uint32 width, uint32 height, bytes)."""
    path = Path(path)
    table = mapping if isinstance(mapping, dict) else read_class_table(mapping)
    if path.suffix.lower() == ".png":
        from PIL import Image

        try:
            with Image.open(path) as im:
                if im.mode not in ("L", "P"):
                    raise ParseError(f"expected single-channel raster, got mode {im.mode}", path=path)
                raster = np.array(im)
        except OSError as exc:
            raise ParseError(str(exc), path=path) from None
        return SemanticMap(raster, table)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ParseError("raster header truncated", path=path, offset=len(raw))
    w, h = np.frombuffer(raw[:8], dtype="<u4")
    if len(raw) != 8 + int(w) * int(h):
        raise ParseError(f"raster body has {len(raw) - 8} bytes, expected {w * h}",
                         path=path, offset=min(len(raw), 8 + int(w) * int(h)))
    raster = np.frombuffer(raw[8:], dtype=np.uint8).reshape(int(h), int(w))
    return SemanticMap(raster, table)


def write_semantic_map(path, seg: SemanticMap):
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(seg.raster.astype(np.uint8), mode="L").save(path)
    else:
        head = np.array([seg.width, seg.height], dtype="<u4").tobytes()
        path.write_bytes(head + seg.raster.astype(np.uint8).tobytes())


# --- detections --------------------------------------------------------------

def detection_to_line(d: Detection) -> str:
    vals = [d.score, *d.box2d, *d.keypoints.ravel()]
    dims = d.dims.as_tuple()
    return " ".join([str(d.class_id)] + [fmt(v) for v in vals] + [str(d.orientation.id)]
                    + [fmt(v) for v in dims])


def parse_detection_line(line, path=None, no=None) -> Detection:
    tok = line.split()
    if len(tok) != 18:
        raise ParseError(f"expected 18 fields, got {len(tok)}", path=path, line=no)
    try:
        class_id = int(tok[0])
        orient = OrientationClass.from_id(int(tok[14]))
    except ValueError as exc:
        raise ParseError(str(exc), path=path, line=no) from None
    v = _floats(tok[1:14] + tok[15:], path, no)
    try:
        return Detection(
            box2d=v[1:5],
            keypoints=np.array(v[5:13]).reshape(4, 2),
            orientation=orient,
            dims=Dimensions3D(*v[13:16]),
            score=v[0],
            class_id=class_id,
        )
    except ValueError as exc:
        raise ParseError(str(exc), path=path, line=no) from None


def read_detections(path) -> list:
    path, lines = _read_lines(path)
    return [parse_detection_line(l, path, no) for no, l in enumerate(lines, start=1) if l.strip()]


def write_detections(path, detections):
    Path(path).write_text("".join(detection_to_line(d) + "\n" for d in detections), encoding="utf-8")


# --- poll results ------------------------------------------------------------

RESULT_FIELDS = 12 + 24


@dataclass(frozen=True, eq=False)
class ResultRecord:
    """One output line: plane, residual, yaw, center, dims, 8 corners."""

    plane: np.ndarray
    residual: float
    yaw: float
    center: np.ndarray
    dims: tuple
    corners: np.ndarray

    @classmethod
    def from_poll(cls, r: PollResult) -> "ResultRecord":
        c = r.cuboid
        return cls(np.array(r.plane.coeffs), r.residual, c.yaw, np.array(c.center),
                   tuple(c.dims), np.array(c.corners))

    @classmethod
    def from_cuboid(cls, cuboid: Cuboid3D, plane: Plane | None = None, residual=0.0):
        coeffs = plane.coeffs if plane is not None else np.append(
            cuboid.up, -cuboid.up @ cuboid.bottom_center)
        return cls(np.array(coeffs), residual, cuboid.yaw, np.array(cuboid.center),
                   tuple(cuboid.dims), np.array(cuboid.corners))

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.residual)

    def cuboid(self) -> Cuboid3D:
        c = self.corners
        up = c[4] - c[0]
        heading = c[0] - c[3]
        return Cuboid3D.from_pose(c[:4].mean(axis=0), heading, up, self.dims)

    def values(self) -> list:
        return [*self.plane, self.residual, self.yaw, *self.center, *self.dims, *self.corners.ravel()]

    def __eq__(self, other):
        if not isinstance(other, ResultRecord):
            return NotImplemented
        a, b = np.array(self.values()), np.array(other.values())
        return bool(np.array_equal(a, b, equal_nan=True))

    __hash__ = None


def infeasible_record() -> ResultRecord:
    nan = math.nan
    return ResultRecord(np.full(4, nan), math.inf, nan, np.full(3, nan), (nan, nan, nan),
                        np.full((8, 3), nan))


def write_results(path, results):
    """One line per entry; ``None`` entries become an all-NaN line with inf residual."""
    lines = []
    for r in results:
        if r is None:
            r = infeasible_record()
        elif isinstance(r, PollResult):
            r = ResultRecord.from_poll(r)
        lines.append(" ".join(fmt(v) for v in r.values()))
    Path(path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def read_results(path) -> list:
    path, lines = _read_lines(path)
    out = []
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != RESULT_FIELDS:
            raise ParseError(f"expected {RESULT_FIELDS} fields, got {len(tok)}", path=path, line=no)
        v = np.array(_floats(tok, path, no))
        out.append(ResultRecord(v[0:4], float(v[4]), float(v[5]), v[6:9], tuple(float(x) for x in v[9:12]),
                                v[12:36].reshape(8, 3)))
    return out
