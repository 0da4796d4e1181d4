"""Time poll_batch for a batch of detections against a large plane database.

    python scripts/bench_poll.py --detections 32 --planes 10000 --threads 4
"""

import argparse
import os
import time

import numpy as np

from gpp.geometry import Plane
from gpp.planes import PlaneDatabase, PlaneEntry
from gpp.solver import poll_batch
from gpp.synth import NoiseModel, generate_scenes


def random_db(n, seed=0):
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        tilt = np.radians(rng.uniform(0, 5))
        az = rng.uniform(0, 2 * np.pi)
        normal = np.array([np.sin(tilt) * np.cos(az), -np.cos(tilt), np.sin(tilt) * np.sin(az)])
        entries.append(PlaneEntry(Plane.from_point_normal([0, rng.uniform(1.3, 2.0), 0], normal),
                                  int(rng.integers(100, 10_000)), f"{i:06d}"))
    return PlaneDatabase(entries)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--detections", type=int, default=32)
    ap.add_argument("--planes", type=int, default=10_000)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    scenes = generate_scenes(0, args.detections, NoiseModel())
    P = scenes[0].camera
    dets = [s.detections[0] for s in scenes]
    db = random_db(args.planes)
    poll_batch(dets, db, P, threads=args.threads)  # warm-up
    times = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        poll_batch(dets, db, P, threads=args.threads)
        times.append(time.perf_counter() - t0)
    print(f"{args.detections} detections x {args.planes} planes, {args.threads} threads: "
          f"median {1e3 * np.median(times):.1f} ms, best {1e3 * min(times):.1f} ms")


if __name__ == "__main__":
    main()
