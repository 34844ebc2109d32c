"""Compare the compiled expression kernels against the pure numpy
fallback on the two workloads that dominate wall time: dense Jacobian
grid scans (Lipschitz estimation) and long pointwise evaluation loops
(trajectory integration).

Usage: python3 benchmarks/bench_kernels.py [--grid N] [--repeats K]
"""

import argparse
import time

import numpy as np

from lmiobs import expr, model
from lmiobs import _kernels_py

try:
    from lmiobs import _kernels_c
except ImportError:
    _kernels_c = None

F_SRC = ("x1^3", "-6*x1^5 - 6*x1^2*x2 - 2*x1^4 - 2*x1^3")


def best_of(repeats, fn):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def grid_jacobians(backend, progs, X, U):
    for prog in progs:
        status, _, _ = backend.jac_batch(prog.code, prog.consts,
                                         prog.stack_depth, X, U)
        assert status == 0


def grid_values(backend, progs, X, U):
    for prog in progs:
        status, _, _ = backend.eval_batch(prog.code, prog.consts,
                                          prog.stack_depth, X, U)
        assert status == 0


def trajectory_values(backend, progs, points, u):
    for x in points:
        for prog in progs:
            status, _ = backend.eval_single(prog.code, prog.consts,
                                            prog.stack_depth, x, u)
            assert status == 0


def trajectory_jacobians(backend, progs, points, u):
    for x in points:
        for prog in progs:
            status, _, _ = backend.jac_single(prog.code, prog.consts,
                                              prog.stack_depth, x, u)
            assert status == 0


def check_agreement(progs, X, U):
    """The two backends must produce identical numbers before their
    speeds are worth comparing."""
    worst = 0.0
    for prog in progs:
        _, _, a = _kernels_py.jac_batch(prog.code, prog.consts,
                                        prog.stack_depth, X, U)
        _, _, b = _kernels_c.jac_batch(prog.code, prog.consts,
                                       prog.stack_depth, X, U)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--grid", type=int, default=201,
                        help="grid points per axis (default 201)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats, best is kept (default 5)")
    args = parser.parse_args()

    f = expr.parse(F_SRC, 2, 0)
    progs = f.programs
    box = model.Box([-0.15, -0.21], [0.15, 0.21])
    X = np.ascontiguousarray(box.grid(args.grid))
    U = np.zeros((X.shape[0], 0))

    # points along a plausible trajectory: what an integrator visits
    rng = np.random.Generator(np.random.Philox(1))
    points = box.sample(rng, 8000)
    u = np.zeros(0)

    if _kernels_c is None:
        print("compiled backend not built; showing the fallback only")
        backends = [("pure", _kernels_py)]
    else:
        print(f"agreement check, max |diff| over the grid: "
              f"{check_agreement(progs, X, U):.3e}")
        backends = [("pure", _kernels_py), ("compiled", _kernels_c)]

    workloads = [
        (f"jacobian grid scan, {X.shape[0]} points",
         lambda b: grid_jacobians(b, progs, X, U)),
        (f"batch evaluation, {X.shape[0]} points",
         lambda b: grid_values(b, progs, X, U)),
        ("pointwise evaluation, 8000 calls",
         lambda b: trajectory_values(b, progs, points, u)),
        ("pointwise jacobians, 8000 calls",
         lambda b: trajectory_jacobians(b, progs, points, u)),
    ]

    name_w = max(len(name) for name, _ in workloads) + 2
    header = f"{'workload':<{name_w}}" + "".join(
        f"{name + ' (ms)':>16}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, work in workloads:
        times = [best_of(args.repeats, lambda b=impl: work(b))
                 for _, impl in backends]
        row = f"{name:<{name_w}}" + "".join(
            f"{1e3 * t:>16.3f}" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
