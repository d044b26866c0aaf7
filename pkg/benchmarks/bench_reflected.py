"""Benchmark the hot kernels: numba backend vs the pure-numpy fallback.

The backend is fixed at import time by SPDELAB_DISABLE_NUMBA, so this
script re-executes itself once with the flag set and compares both runs.

Usage: python benchmarks/bench_reflected.py [--quick]
"""

import argparse
import math
import os
import subprocess
import sys
import time

import numpy as np


def bench_solver(n_sites, dt, T, repeats):
    from spdelab.grids import SpaceTimeGrid
    from spdelab.reflected import solve_reflected
    from spdelab.sampling import RngStream, sample_bessel3_bridge

    grid = SpaceTimeGrid(n_sites, dt, T)
    x0 = sample_bessel3_bridge(grid, RngStream(1, 0))
    solve_reflected(x0, grid, RngStream(1, 1))   # warm the jit cache
    t0 = time.perf_counter()
    for r in range(repeats):
        solve_reflected(x0, grid, RngStream(1, 2 + r))
    dt_wall = (time.perf_counter() - t0) / repeats
    steps = grid.n_steps * n_sites
    return dt_wall, steps / dt_wall / 1e6


def bench_skorohod(n_paths, dt, T):
    from spdelab.reflected import skorohod_ensemble
    from spdelab.sampling import RngStream

    skorohod_ensemble(512, dt, 10 * dt, 0.0, (0.2,), RngStream(2, 0))
    t0 = time.perf_counter()
    skorohod_ensemble(n_paths, dt, T, 0.0, (0.15, 0.3), RngStream(2, 1))
    wall = time.perf_counter() - t0
    return wall, n_paths * int(round(T / dt)) / wall / 1e6


def run(args):
    from spdelab import backend_name

    name = backend_name()
    scale = (63, 2.5e-4, 0.25, 3) if args.quick else (127, 1e-4, 0.5, 3)
    wall, rate = bench_solver(*scale)
    print(f"{name:6s} reflected solver  N={scale[0]:4d} dt={scale[1]:g}: "
          f"{wall*1e3:8.1f} ms/run  {rate:7.2f} M site-steps/s", flush=True)
    npaths = 2000 if args.quick else 20_000
    wall, rate = bench_skorohod(npaths, 1e-4, 0.25)
    print(f"{name:6s} skorohod ensemble {npaths} paths: "
          f"{wall*1e3:8.1f} ms      {rate:7.2f} M path-steps/s", flush=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--single", action="store_true",
                    help="run only the current backend (no re-exec)")
    args = ap.parse_args()
    run(args)
    if not args.single and not os.environ.get("SPDELAB_DISABLE_NUMBA"):
        env = dict(os.environ, SPDELAB_DISABLE_NUMBA="1")
        cmd = [sys.executable, os.path.abspath(__file__), "--single"]
        if args.quick:
            cmd.append("--quick")
        subprocess.run(cmd, env=env, check=True)


if __name__ == "__main__":
    main()
