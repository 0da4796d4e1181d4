"""Directory-level plumbing shared by the CLI and the experiment scripts:
writing synthetic datasets, polling a detection directory, evaluation and the
database-size ablation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kitti_io as kio
from .encoding import bin_center
from .geometry import ProjectionMatrix
from .metrics import (
    APResult,
    CurveSeries,
    EvalPair,
    Scored,
    average_orientation_similarity,
    bin_values,
    match_greedy,
)
from .planes import GROUND_CLASSES, PlaneDatabase, PlaneEntry, RansacConfig, build_database
from .solver import poll_batch
from .synth import CLASS_TABLE, NoiseModel, generate_frames, generate_scenes, label_for

DEFAULT_EDGES = tuple(float(e) for e in range(0, 55, 5))
METRICS = ("center", "closest", "iou3d", "orientation")


def frame_ids(directory, suffix=".txt") -> list:
    return sorted(p.stem for p in Path(directory).glob(f"*{suffix}"))


# --- synth ----------------------------------------------------------------------

def write_synth(out, seed=0, n_scenes=10, noise: NoiseModel = NoiseModel(), n_objects=1,
                n_frames=0):
    """Write a KITTI-style synthetic dataset under ``out``.

    Layout: ``calib/``, ``label_2/`` (KITTI labels), ``truth/`` (exact truth
    boxes in the result format), ``detections/`` (noisy), ``true_planes.txt``
    (database of the scenes' planes) and, with ``n_frames``, LiDAR frames
    under ``frames/`` for ``build-db``.
    """
    out = Path(out)
    for sub in ("calib", "label_2", "truth", "detections"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    scenes = generate_scenes(seed, n_scenes, noise, n_objects)
    entries = []
    for i, s in enumerate(scenes):
        fid = f"{i:06d}"
        kio.write_calib(out / "calib" / f"{fid}.txt", {"P2": s.camera.entries})
        kio.write_labels(out / "label_2" / f"{fid}.txt", [label_for(o, s.camera) for o in s.objects])
        kio.write_results(out / "truth" / f"{fid}.txt",
                          [kio.ResultRecord.from_cuboid(o.cuboid, o.plane) for o in s.objects])
        kio.write_detections(out / "detections" / f"{fid}.txt", s.detections)
        entries.append(PlaneEntry(s.plane, 1, fid))
    PlaneDatabase(entries).save(out / "true_planes.txt")
    if n_frames:
        write_frames(out / "frames", seed + 1, n_frames)
    return scenes


def write_frames(out, seed, n_frames):
    out = Path(out)
    for sub in ("velodyne", "semantic", "calib"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    kio.write_class_table(out / "semantic_classes.txt", CLASS_TABLE)
    for fid, cloud, P, seg in generate_frames(seed, n_frames):
        kio.write_cloud(out / "velodyne" / f"{fid}.bin", cloud.points)
        kio.write_semantic_map(out / "semantic" / f"{fid}.png", seg)
        kio.write_calib(out / "calib" / f"{fid}.txt", {"P2": P.entries})


def load_frames(frames_dir, calib_name="P2"):
    """``(frame_id, cloud, P, seg)`` tuples from a frames directory."""
    root = Path(frames_dir)
    table = kio.read_class_table(root / "semantic_classes.txt")
    frames = []
    for fid in frame_ids(root / "velodyne", ".bin"):
        calib = kio.parse_calib(root / "calib" / f"{fid}.txt")
        cloud = kio.read_cloud(root / "velodyne" / f"{fid}.bin")
        if "Tr_velo_to_cam" in calib:
            cloud = type(cloud)(kio.velo_to_camera(cloud.points, calib))
        sem = next((root / "semantic" / f"{fid}{ext}" for ext in (".png", ".raw")
                    if (root / "semantic" / f"{fid}{ext}").exists()), None)
        if sem is None:
            raise FileNotFoundError(f"no semantic map for frame {fid}")
        seg = kio.read_semantic_map(sem, table)
        frames.append((fid, cloud, calib.projection(calib_name), seg))
    if not frames:
        raise FileNotFoundError(f"no frames under {root / 'velodyne'}")
    return frames


def build_db_from_dir(frames_dir, cfg=RansacConfig(), seed=0, threads=1, calib_name="P2",
                      classes=GROUND_CLASSES, max_tilt_deg=90.0) -> PlaneDatabase:
    frames = load_frames(frames_dir, calib_name)
    if set(classes) != set(GROUND_CLASSES):
        from .planes import filter_by_semantics

        frames = [(f, filter_by_semantics(c, P, s, classes), P, None) for f, c, P, s in frames]
    return build_database(frames, cfg, seed=seed, threads=threads, max_tilt_deg=max_tilt_deg)


# --- poll -------------------------------------------------------------------------

def _calib_for(calib, fid, calib_name):
    path = Path(calib)
    if path.is_dir():
        path = path / f"{fid}.txt"
    return kio.parse_calib(path).projection(calib_name)


def poll_directory(detections, db: PlaneDatabase, calib, out, top_k=None, threads=1,
                   calib_name="P2") -> int:
    """Poll every detection file; returns the number of detections processed."""
    det_path = Path(detections)
    if top_k:
        db = db.top_k(top_k)
    if det_path.is_dir():
        jobs = [(fid, det_path / f"{fid}.txt") for fid in frame_ids(det_path)]
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        targets = [out_dir / f"{fid}.txt" for fid, _ in jobs]
    else:
        jobs = [(det_path.stem, det_path)]
        targets = [Path(out)]
    n = 0
    for (fid, path), target in zip(jobs, targets):
        dets = kio.read_detections(path)
        P = _calib_for(calib, fid, calib_name)
        results = poll_batch(dets, db, P, threads=threads)
        kio.write_results(target, results)
        n += len(dets)
    return n


# --- eval ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    pairs: list
    ap: APResult
    n_gt: int
    n_det: int
    n_infeasible: int

    def values(self, metric) -> np.ndarray:
        f = {
            "center": EvalPair.center_error,
            "closest": EvalPair.closest_point_error,
            "iou3d": EvalPair.iou_3d,
            "orientation": EvalPair.orientation_error_deg,
        }[metric]
        return np.array([f(p) for p in self.pairs])

    def mean(self, metric) -> float:
        v = self.values(metric)
        return float(v.mean()) if len(v) else math.nan

    def curve(self, metric, edges=DEFAULT_EDGES) -> CurveSeries:
        return bin_values(self.values(metric), [p.distance for p in self.pairs], edges)

    def summary_lines(self) -> list:
        def f(v):
            return "nan" if v is None else format(v, ".17g")

        return [
            f"n_gt {self.n_gt}",
            f"n_det {self.n_det}",
            f"n_matched {len(self.pairs)}",
            f"n_infeasible {self.n_infeasible}",
            f"mean_center_error_m {f(self.mean('center'))}",
            f"mean_closest_point_error_m {f(self.mean('closest'))}",
            f"mean_iou3d {f(self.mean('iou3d'))}",
            f"mean_orientation_error_deg {f(self.mean('orientation'))}",
            f"AP {f(self.ap.ap)}",
            f"AOS {f(self.ap.aos)}",
            f"OS {f(self.ap.os)}",
        ]


def evaluate(frames, iou_threshold=0.7, recall_points=40) -> EvalReport:
    """Evaluate ``frames``: iterable of ``(fid, detections, results, labels, truth)``.

    ``truth`` is a list of exact truth cuboids or ``None`` to derive them
    from the labels. 3D metrics use detections matched to ground truth at
    2D IoU >= ``iou_threshold``.
    """
    pairs, dets_s, gts_s = [], [], []
    n_det = n_inf = 0
    for fid, dets, results, labels, truth in frames:
        if len(results) != len(dets):
            raise ValueError(f"frame {fid}: {len(results)} results for {len(dets)} detections")
        labels = [l for l in labels if l.type != "DontCare"]
        truths = truth if truth is not None else [l.cuboid() for l in labels]
        if len(truths) != len(labels):
            raise ValueError(f"frame {fid}: truth and label counts differ")
        fd = []
        for d, r in zip(dets, results):
            if r.feasible:
                alpha = r.cuboid().observation_angle(np.zeros(3))
            else:
                alpha = bin_center(d.orientation.yaw_bin)
                n_inf += 1
            fd.append(Scored(fid, tuple(d.box2d), alpha, d.score))
        fg = [Scored(fid, tuple(l.bbox), l.alpha) for l in labels]
        order, matched = match_greedy(fd, fg, iou_threshold)
        for i, j in zip(order, matched):
            if j >= 0 and results[i].feasible:
                pairs.append(EvalPair(results[i].cuboid(), truths[j], dets[i].box2d, np.array(labels[j].bbox)))
        dets_s.extend(fd)
        gts_s.extend(fg)
        n_det += len(dets)
    ap = average_orientation_similarity(dets_s, gts_s, iou_threshold, recall_points)
    return EvalReport(pairs, ap, len(gts_s), n_det, n_inf)


def load_eval_frames(results_dir, detections_dir, truth_root):
    truth_root = Path(truth_root)
    label_dir = truth_root / "label_2" if (truth_root / "label_2").is_dir() else truth_root
    cuboid_dir = truth_root / "truth"
    for fid in frame_ids(detections_dir):
        dets = kio.read_detections(Path(detections_dir) / f"{fid}.txt")
        res = kio.read_results(Path(results_dir) / f"{fid}.txt")
        labels = kio.parse_labels(label_dir / f"{fid}.txt")
        truth = None
        if (cuboid_dir / f"{fid}.txt").exists():
            truth = [r.cuboid() for r in kio.read_results(cuboid_dir / f"{fid}.txt")]
        yield fid, dets, res, labels, truth


def write_report(report: EvalReport, out, edges=DEFAULT_EDGES):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text("\n".join(report.summary_lines()) + "\n", encoding="utf-8")
    for m in METRICS:
        report.curve(m, edges).save(out / f"curve_{m}.txt")


# --- ablation -------------------------------------------------------------------------

DEFAULT_SIZES = (10, 100, 1000, 10000, 22000)


def ablate(db: PlaneDatabase, frames, sizes=DEFAULT_SIZES, threads=1, iou_threshold=0.7):
    """Poll every frame against ``db.top_k(k)`` for each size ``k``.

    ``frames`` holds ``(fid, detections, P, labels, truth)``. Sizes above the
    database size are capped and deduplicated. Returns ``{k: EvalReport}``.
    """
    ks = sorted({min(int(k), len(db)) for k in sizes})
    reports = {}
    for k in ks:
        sub = db.top_k(k)
        eval_frames = []
        for fid, dets, P, labels, truth in frames:
            res = [kio.ResultRecord.from_poll(r) if r is not None else kio.infeasible_record()
                   for r in poll_batch(dets, sub, P, threads=threads)]
            eval_frames.append((fid, dets, res, labels, truth))
        reports[k] = evaluate(eval_frames, iou_threshold)
    return reports


def load_ablation_frames(detections_dir, calib, truth_root, calib_name="P2"):
    truth_root = Path(truth_root)
    label_dir = truth_root / "label_2" if (truth_root / "label_2").is_dir() else truth_root
    cuboid_dir = truth_root / "truth"
    frames = []
    for fid in frame_ids(detections_dir):
        dets = kio.read_detections(Path(detections_dir) / f"{fid}.txt")
        P = _calib_for(calib, fid, calib_name)
        labels = kio.parse_labels(label_dir / f"{fid}.txt")
        truth = None
        if (cuboid_dir / f"{fid}.txt").exists():
            truth = [r.cuboid() for r in kio.read_results(cuboid_dir / f"{fid}.txt")]
        frames.append((fid, dets, P, labels, truth))
    return frames


def write_ablation(reports: dict, out, edges=DEFAULT_EDGES):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["size n_matched mean_center_m mean_closest_m mean_iou3d mean_orientation_deg"]
    for k, rep in reports.items():
        rows.append(" ".join([str(k), str(len(rep.pairs))]
                             + [format(rep.mean(m), ".17g") for m in METRICS]))
        for m in METRICS:
            rep.curve(m, edges).save(out / f"curve_{m}_{k}.txt")
    (out / "ablation.txt").write_text("\n".join(rows) + "\n", encoding="utf-8")
