"""Time the compiled kernels against the pure-Python reference implementations.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each kernel runs on identical inputs under both backends; the table reports
the best wall time of ``--repeat`` runs and whether the outputs agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from casbandit import _pykernels
from casbandit.scheduler import PerturbationSpec, SchedulerState

try:
    from casbandit import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def best_time(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def rewards_case(scale):
    m = 21
    state = SchedulerState([PerturbationSpec(i, 6.0 if i < 3 else 1.0) for i in range(m)])
    rng = np.random.default_rng(0)
    for arm in rng.integers(0, m, 2000):
        state.record(int(arm), float(rng.lognormal()))
    led = state.ledger
    args = (state.win_logs, state.win_len, state.win_pos, state.weights,
            led.log_prev, led.log_last, led.closed_counts, led.closed_totals)
    calls = max(1, int(2000 * scale))

    def run(mod):
        def go():
            for _ in range(calls):
                out = mod.compute_rewards(*args)
            return out
        return go
    return f"compute_rewards x{calls} (M=21)", run, lambda a, b: all(np.array_equal(x, y) for x, y in zip(a, b))


def ucb_case(scale):
    horizon = max(10, int(10**5 * scale))
    means = np.array([0.9, 0.8, 0.5, 0.1])
    u = np.random.default_rng(1).random(horizon)

    def run(mod):
        return lambda: mod.ucb_bernoulli(means, u)
    return f"ucb_bernoulli T={horizon}", run, lambda a, b: all(np.array_equal(x, y) for x, y in zip(a, b))


def thompson_case(scale):
    horizon = max(10, int(10**5 * scale))
    means = np.array([0.9, 0.8, 0.5, 0.1])

    def run(mod):
        return lambda: mod.thompson_bernoulli(means, horizon, np.random.default_rng(2))
    return f"thompson_bernoulli T={horizon}", run, lambda a, b: all(np.array_equal(x, y) for x, y in zip(a, b))


def sgd_case(scale):
    horizon = max(10, int(10**5 * scale))
    rng = np.random.default_rng(3)
    d, m = 5, 3
    g = rng.standard_normal((m, d, d))
    h = g @ g.transpose(0, 2, 1) / d + np.eye(d)
    off = rng.standard_normal((m, d))
    arms = rng.integers(0, m, horizon).astype(np.int64)
    etas = 0.1 / np.arange(1, horizon + 1)
    theta0, star = np.full(d, 10.0), np.zeros(d)

    def run(mod):
        return lambda: mod.sgd_quadratic(h, off, arms, etas, theta0, star)
    return (f"sgd_quadratic T={horizon} (d=5)", run,
            lambda a, b: np.allclose(a[1], b[1], rtol=1e-10, atol=0) and np.allclose(a[0], b[0], rtol=1e-10))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies every problem size")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; nothing to compare")
        return 1
    rows = []
    for case in (rewards_case, ucb_case, thompson_case, sgd_case):
        name, run, same = case(args.scale)
        tc, oc = best_time(run(_ckernels), args.repeat)
        tp, op = best_time(run(_pykernels), args.repeat)
        rows.append((name, tp, tc, tp / tc, "yes" if same(oc, op) else "NO"))
    head = ("kernel", "python s", "cython s", "speedup", "agree")
    body = [(n, f"{a:.4f}", f"{b:.4f}", f"{c:.1f}x", d) for n, a, b, c, d in rows]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    for line in [head] + body:
        print("  ".join(str(x).ljust(w) for x, w in zip(line, widths)))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
