"""``gpp`` command-line entry point.

Exit codes: 0 success, 1 validation error, 2 I/O error. Failures also print
one JSON object on stderr: ``{"error": <kind>, "type": <exception>, "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .errors import GPPError, ParseError
from .planes import GROUND_CLASSES, PlaneDatabase, RansacConfig
from .synth import NoiseModel

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


def _sizes(text):
    try:
        sizes = [int(s) for s in text.split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list: {text!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return sizes


def _edges(text):
    try:
        edges = [float(s) for s in text.split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad edge list: {text!r}")
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise argparse.ArgumentTypeError("edges must be at least two increasing numbers")
    return edges


def _common(p, db=False, calib=False, top_k=False):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", required=True, help="output file or directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    if db:
        p.add_argument("--db", required=True, help="plane database file")
    if calib:
        p.add_argument("--calib", required=True, help="calibration file or directory of <frame>.txt")
        p.add_argument("--calib-name", default="P2", help="projection matrix key (default P2)")
    if top_k:
        p.add_argument("--top-k", type=int, default=None, help="poll only the K highest-ranked planes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpp", description="Ground plane polling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-db", help="extract ground planes from LiDAR frames")
    _common(p)
    p.add_argument("--frames", required=True,
                   help="directory with velodyne/, semantic/, calib/ and semantic_classes.txt")
    p.add_argument("--calib-name", default="P2")
    p.add_argument("--threshold", type=float, default=0.02, help="inlier threshold in meters")
    p.add_argument("--probability", type=float, default=0.999, help="RANSAC success probability")
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--min-points", type=int, default=3)
    p.add_argument("--no-refit", action="store_true", help="keep raw 3-point sample planes")
    p.add_argument("--classes", default=",".join(GROUND_CLASSES),
                   help="comma-separated ground class names")
    p.add_argument("--max-tilt", type=float, default=90.0,
                   help="reject planes whose normal is this many degrees or more from up")

    p = sub.add_parser("synth", help="generate a synthetic dataset with exact ground truth")
    _common(p)
    p.add_argument("--n-scenes", type=int, default=100)
    p.add_argument("--objects", type=int, default=1, help="objects per scene")
    p.add_argument("--keypoint-sigma", type=float, default=2.0, help="keypoint noise in pixels")
    p.add_argument("--dims-sigma", type=float, default=0.05, help="dimension noise in meters")
    p.add_argument("--flip-prob", type=float, default=0.01, help="orientation flip probability")
    p.add_argument("--noiseless", action="store_true", help="disable all noise")
    p.add_argument("--frames", type=int, default=0, help="also write N LiDAR frames under frames/")

    p = sub.add_parser("poll", help="select a ground plane and 3D box per detection")
    _common(p, db=True, calib=True, top_k=True)
    p.add_argument("--detections", required=True, help="detection file or directory")

    p = sub.add_parser("eval", help="evaluate results against ground truth")
    _common(p)
    p.add_argument("--results", required=True, help="directory of result files")
    p.add_argument("--detections", required=True, help="directory of detection files")
    p.add_argument("--truth", required=True, help="directory with label_2/ (and optional truth/)")
    p.add_argument("--iou-threshold", type=float, default=0.7)
    p.add_argument("--recall-points", type=int, choices=(11, 40), default=40)
    p.add_argument("--edges", type=_edges, default=list(pipeline.DEFAULT_EDGES),
                   help="distance bin edges in meters, comma-separated")

    p = sub.add_parser("ablate", help="metric curves versus plane database size")
    _common(p, db=True, calib=True, top_k=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--sizes", type=_sizes, default=list(pipeline.DEFAULT_SIZES))
    p.add_argument("--iou-threshold", type=float, default=0.7)
    p.add_argument("--edges", type=_edges, default=list(pipeline.DEFAULT_EDGES))
    return parser


def _positive(name, value):
    if value is not None and value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")


def run(args) -> int:
    _positive("--threads", args.threads)
    _positive("--top-k", getattr(args, "top_k", None))
    cmd = args.command
    if cmd == "build-db":
        cfg = RansacConfig(args.threshold, args.probability, args.min_points,
                           args.max_iterations, not args.no_refit)
        classes = tuple(c.strip() for c in args.classes.split(",") if c.strip())
        db = pipeline.build_db_from_dir(args.frames, cfg, args.seed, args.threads,
                                        args.calib_name, classes, args.max_tilt)
        db.save(args.out)
        print(f"planes {len(db)}")
    elif cmd == "synth":
        _positive("--n-scenes", args.n_scenes)
        _positive("--objects", args.objects)
        noise = NoiseModel.none() if args.noiseless else NoiseModel(
            args.keypoint_sigma, args.dims_sigma, args.flip_prob)
        if noise.keypoint_sigma < 0 or noise.dims_sigma < 0 or not 0 <= noise.flip_prob <= 1:
            raise ValueError("noise parameters must be non-negative and flip-prob in [0, 1]")
        scenes = pipeline.write_synth(args.out, args.seed, args.n_scenes, noise, args.objects, args.frames)
        print(f"scenes {len(scenes)}")
    elif cmd == "poll":
        db = PlaneDatabase.load(args.db)
        if len(db) == 0:
            raise ValueError("plane database is empty")
        n = pipeline.poll_directory(args.detections, db, args.calib, args.out, args.top_k,
                                    args.threads, args.calib_name)
        print(f"detections {n}")
    elif cmd == "eval":
        frames = list(pipeline.load_eval_frames(args.results, args.detections, args.truth))
        report = pipeline.evaluate(frames, args.iou_threshold, args.recall_points)
        pipeline.write_report(report, args.out, args.edges)
        print("\n".join(report.summary_lines()))
    elif cmd == "ablate":
        db = PlaneDatabase.load(args.db)
        if len(db) == 0:
            raise ValueError("plane database is empty")
        if args.top_k:
            db = db.top_k(args.top_k)
        frames = pipeline.load_ablation_frames(args.detections, args.calib, args.truth, args.calib_name)
        reports = pipeline.ablate(db, frames, args.sizes, args.threads, args.iou_threshold)
        pipeline.write_ablation(reports, args.out, args.edges)
        print((Path(args.out) / "ablation.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def _fail(kind, exc, code) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ParseError):
        payload.update(path=exc.path and str(exc.path), line=exc.line, offset=exc.offset)
    if isinstance(exc, OSError) and getattr(exc, "filename", None):
        payload["path"] = str(exc.filename)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code in (0, None):
            return EXIT_OK
        return _fail("validation", ValueError("invalid command-line arguments"), EXIT_VALIDATION)
    try:
        return run(args)
    except ParseError as e:
        return _fail("io", e, EXIT_IO)
    except OSError as e:
        return _fail("io", e, EXIT_IO)
    except (GPPError, ValueError) as e:
        return _fail("validation", e, EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
