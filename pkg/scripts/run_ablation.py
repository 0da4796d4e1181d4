"""Database-size ablation on synthetic data.

Builds a plane database from synthetic LiDAR frames, then polls a fixed noisy
evaluation set against the top-k planes for several k and prints the mean
errors per size. Curves are written under --out when given.

    python scripts/run_ablation.py --frames 250 --scenes 500 --out runs/ablation
"""

import argparse
import time

from gpp import pipeline
from gpp.planes import RansacConfig, build_database
from gpp.synth import NoiseModel, generate_frames, generate_scenes, label_for


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=250, help="LiDAR frames for the database")
    ap.add_argument("--scenes", type=int, default=500, help="evaluation scenes")
    ap.add_argument("--sizes", default="10,100,1000,10000,22000")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    t0 = time.perf_counter()
    db = build_database(generate_frames(args.seed + 1, args.frames), RansacConfig(),
                        seed=args.seed, threads=args.threads)
    print(f"database: {len(db)} planes in {time.perf_counter() - t0:.1f}s")

    scenes = generate_scenes(args.seed, args.scenes, NoiseModel())
    frames = []
    for i, s in enumerate(scenes):
        frames.append((f"{i:06d}", s.detections, s.camera,
                       [label_for(o, s.camera) for o in s.objects], [o.cuboid for o in s.objects]))
    reports = pipeline.ablate(db, frames, [int(k) for k in args.sizes.split(",")], args.threads)

    print(f"{'size':>6} {'center[m]':>10} {'closest[m]':>11} {'IoU3D':>7} {'orient[deg]':>12}")
    for k, rep in reports.items():
        print(f"{k:>6} {rep.mean('center'):>10.3f} {rep.mean('closest'):>11.3f} "
              f"{rep.mean('iou3d'):>7.3f} {rep.mean('orientation'):>12.2f}")
    if args.out:
        pipeline.write_ablation(reports, args.out)
        print(f"curves written to {args.out}")


if __name__ == "__main__":
    main()
