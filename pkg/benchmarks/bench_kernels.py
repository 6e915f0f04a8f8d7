"""Compiled vs pure-Python kernels: timings and a bit-identity check.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]
"""
import argparse
import time

import numpy as np

from meshlift import kernels
from meshlift.datagen import cloth as cl
from meshlift.datagen import scene
from meshlift.geometry import grid_triangles


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def raster_case(N, size, seed=0):
    rng = np.random.default_rng(seed)
    g = np.stack(np.meshgrid(np.linspace(0.15, 0.85, N), np.linspace(0.15, 0.85, N)), -1).reshape(-1, 2)
    px = g * size + rng.normal(0, 0.02 * size, g.shape)
    z = rng.uniform(1.5, 2.5, N * N)
    tris = grid_triangles(N)
    return lambda impl: impl.rasterize(px, z, tris, size, size)


def cloth_case(N, steps, seed=0):
    def run(impl):
        state, _ = scene.sample_cloth(N, np.random.default_rng(seed))
        k = cl.substeps(N)
        snaps = cl.step_cloth(state, steps * k, 1e-3 / k, seed=seed, snapshot_every=steps * k // 4, backend=impl)
        return state.positions, state.velocities, snaps
    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller cases")
    args = ap.parse_args(argv)
    try:
        compiled = kernels.get_backend("compiled")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    python = kernels.get_backend("python")
    scale = 1 if args.quick else 2
    cases = [
        (f"rasterize N=5 {64 * scale}px", raster_case(5, 64 * scale)),
        (f"rasterize N=9 {112 * scale}px", raster_case(9, 112 * scale)),
        (f"cloth N=5 {500 * scale} steps", cloth_case(5, 500 * scale)),
        (f"cloth N=9 {250 * scale} steps", cloth_case(9, 250 * scale)),
    ]
    print(f"{'case':<26} {'compiled ms':>12} {'python ms':>11} {'speedup':>8}  identical")
    for name, case in cases:
        tc_, a = best_of(lambda: case(compiled), args.repeat)
        tp, b = best_of(lambda: case(python), args.repeat)
        same = all(np.array_equal(x, y) for x, y in zip(a, b))
        print(f"{name:<26} {1e3 * tc_:12.2f} {1e3 * tp:11.2f} {tp / tc_:7.1f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
