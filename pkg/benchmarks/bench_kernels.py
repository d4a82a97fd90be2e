"""Compare the compiled and numpy kernel backends.

Times each kernel at several grid sizes, then one full-order step and one
gradient evaluation of the optimal control cost. Run with

    python3 benchmarks/bench_kernels.py [--nx 32 64] [--repeat 200]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from romfbk import kernels
from romfbk.grid import FomConfig, Scenario, build_grid, gaussian_density, step
from romfbk.ocp import OcpConfig, cost_and_gradient


def kernel_cases(nx, rng):
    n = nx * nx
    y, g = rng.random(n), rng.standard_normal(n)
    wx, wy = rng.standard_normal(n), rng.standard_normal(n)
    return {
        "advect": lambda: kernels.advect(y, wx, wy, nx),
        "advect_adjoint": lambda: kernels.advect_adjoint(g, y, wx, wy, nx),
        "laplacian": lambda: kernels.laplacian(y, nx),
        "cg_solve": lambda: kernels.cg_solve(y, nx, 0.25 * 0.001 * (nx / 2) ** 2, 1e-10, 10 * n),
    }


def model_cases(nx, rng):
    grid, fom = build_grid(nx), FomConfig()
    y0 = gaussian_density(grid, (-0.3, 0.1))
    u = 0.3 * rng.standard_normal((fom.Nt, 2, grid.n_cells))
    sc = Scenario((0.3, -0.2))
    yd = gaussian_density(grid, sc.target_center)
    return {
        "fom_step": lambda: step(y0, u[0], None, grid, fom),
        "cost_and_gradient": lambda: cost_and_gradient(u, y0, sc, grid, fom, OcpConfig(), yd),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, nargs="+", default=[32, 64])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"{'case':<20}{'nx':>5}" + "".join(f"{b + ' [us]':>16}" for b in backends)
          + ("     speed-up" if len(backends) == 2 else ""))
    for nx in args.nx:
        for make, reps in ((kernel_cases, args.repeat), (model_cases, max(1, args.repeat // 20))):
            names = make(nx, np.random.default_rng(0)).keys()
            for name in names:
                times = []
                for b in backends:
                    kernels.use_backend(b)
                    fn = make(nx, np.random.default_rng(0))[name]
                    fn()
                    times.append(min(timeit.repeat(fn, number=reps, repeat=3)) / reps * 1e6)
                row = f"{name:<20}{nx:>5}" + "".join(f"{t:>16.1f}" for t in times)
                if len(times) == 2:
                    row += f"{times[0] / times[1]:>12.1f}x"
                print(row)
    kernels.use_backend(backends[-1])


if __name__ == "__main__":
    main()
