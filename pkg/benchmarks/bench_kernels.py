"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py --N 25 --steps 2000 --repeat 3

Each case runs the forward Verlet march and the adjoint march on the same
inputs with both backends and reports the best wall time of ``--repeat``
runs plus the speedup.
"""

import argparse
import time

import numpy as np

from tentacle import Grid, paper_params
from tentacle import kernels
from tentacle.dynamic_opt import DynamicProblem, solve_adjoint
from tentacle.dynamics import SimOptions, simulate, straight_rod


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(N, steps, repeat):
    p = paper_params(N, dynamic_friction=True)
    g = Grid(N, steps, 1e-4)
    profile = np.random.default_rng(0).uniform(-0.5, 0.5, N + 1)
    U = np.tile(profile, (steps + 1, 1))
    prob = DynamicProblem((0.5, -0.25), tau=1e-4, T=g.T)
    q0 = straight_rod(N)
    rows = []
    for name in ("forward", "adjoint"):
        timing = {}
        for b in ("python", "compiled"):
            traj = simulate(q0, None, U, p, g, SimOptions(backend=b))
            if name == "forward":
                fn = lambda b=b: simulate(q0, None, U, p, g, SimOptions(backend=b))
            else:
                fn = lambda b=b, traj=traj: solve_adjoint(traj, U, prob, p, g, backend=b)
            timing[b] = best_of(fn, repeat)
        rows.append((name, N, steps, timing["python"], timing["compiled"]))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, nargs="+", default=[10, 25, 50])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        kernels.get_backend("compiled")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'kernel':<8} {'N':>4} {'steps':>7} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8}")
    for N in args.N:
        for name, n, m, tp, tc in bench(N, args.steps, args.repeat):
            print(f"{name:<8} {n:>4} {m:>7} {tp:>11.4f} {tc:>13.4f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
