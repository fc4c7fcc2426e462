"""Time each hot kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeats 20] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np

from duet import kernels
from duet.metrics import DeskEmbedder, eid


def _cases(rng):
    pa, pb = rng.standard_normal((2, 64, 16, 22, 3))
    dist = kernels.cross_distances(pa, pb)
    g = rng.standard_normal(dist.shape)
    e32, e256 = rng.standard_normal((2, 32, 64)), rng.standard_normal((2, 256, 64))
    lin, yv = rng.standard_normal((4096, 2)) * 0.05, rng.standard_normal(4096) * 0.05
    x = rng.standard_normal((64, 16, 268))
    emb = DeskEmbedder()
    return {
        "linear_assignment 32x32": lambda: kernels.linear_assignment(kernels.sq_dist_matrix(e32[0], e32[1])),
        "linear_assignment 256x256": lambda: kernels.linear_assignment(kernels.sq_dist_matrix(e256[0], e256[1])),
        "cross_distances 64x16x22x22": lambda: kernels.cross_distances(pa, pb),
        "cross_distances_backward": lambda: kernels.cross_distances_backward(pa, pb, dist, g),
        "sq_dist_matrix 256x256x64": lambda: kernels.sq_dist_matrix(e256[0], e256[1]),
        "integrate_root 4096 frames": lambda: kernels.integrate_root(lin, yv),
        "embed + eid, 64 pairs": lambda: eid(emb.embed(x[:32], x[32:]), emb.embed(x[32:], x[:32])),
    }


def _time(fn, repeats):
    fn()  # compile / warm caches
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if not kernels._HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    original = kernels.backend()
    results = {}
    cases = _cases(np.random.default_rng(0))
    for name, fn in cases.items():
        row = {}
        for backend in ("numba", "numpy"):
            kernels.set_backend(backend)
            row[backend] = _time(fn, args.repeats)
        results[name] = row
    kernels.set_backend(original)
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, row in results.items():
        print(f"{name:32s} {row['numba'] * 1e3:10.3f} {row['numpy'] * 1e3:10.3f} {row['numpy'] / row['numba']:8.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
