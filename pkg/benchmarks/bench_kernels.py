"""Timing comparison of the two raster kernel backends.

The compiled extension and the numpy fallback are bit-identical (the test
suite asserts as much); this script only reports how much wall-clock the
extension buys. Run from the repository root:

    python3 benchmarks/bench_kernels.py [repeats]
"""

import sys
import time

import numpy as np

from polyseq._kernels import available_backends


def time_call(fn, *args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def random_convex(rng):
    # star-shaped around the centroid, comfortably inside the unit square
    m = 4
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, m))
    radii = rng.uniform(0.1, 0.35, m)
    center = rng.uniform(0.4, 0.6, 2)
    return center + np.stack([np.cos(angles), np.sin(angles)], 1) * radii[:, None]


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 5
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension unavailable; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    polys = [(random_convex(rng), random_convex(rng)) for _ in range(20)]

    jobs = []
    canvas = np.zeros((256, 256), dtype=np.uint8)
    jobs.append(("draw_segment 256px x100", lambda impl: [
        impl.draw_segment(canvas, 10.0, 20.0, 240.0, 200.0, 2.5, 255)
        for _ in range(100)
    ]))
    jobs.append(("draw_disc 256px x100", lambda impl: [
        impl.draw_disc(canvas, 128.0, 128.0, 40.0, 255) for _ in range(100)
    ]))
    for res in (512, 2048):
        jobs.append((f"raster_iou {res}^2 x20", lambda impl, r=res: [
            impl.raster_iou_counts(a, b, r) for a, b in polys
        ]))

    width = max(len(name) for name, _ in jobs)
    print(f"{'kernel'.ljust(width)}  {'numpy':>10}  {'cython':>10}  speedup")
    for name, job in jobs:
        times = {}
        for backend, impl in backends.items():
            times[backend] = time_call(job, impl, repeats=repeats)
        ratio = times["numpy"] / times["cython"]
        print(f"{name.ljust(width)}  {times['numpy']*1e3:9.2f}ms  "
              f"{times['cython']*1e3:9.2f}ms  {ratio:6.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
