"""Time the compiled kernels against the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the median wall time of each backend and the
speed-up. Both backends are fed identical inputs and their outputs are
compared before timing.
"""
import argparse
import statistics
import sys
import time

import numpy as np

from pfopt.kernels import available_backends, get_backend
from pfopt.simulation import constant_corr_market
from pfopt.estimators import ledoit_wolf_shrinkage
from pfopt.solver import FactoredOperator, SolverProblem
from pfopt.sorted_l1 import bh_lambda_sequence


def median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(rng):
    y = rng.standard_normal(2000)
    lam = bh_lambda_sequence(2000, 0.1)
    yield "prox k=2000", lambda kn: kn.prox_sorted_l1(y, lam)
    yield "dual norm k=2000", lambda kn: kn.dual_sorted_l1_norm(y, lam)

    S = ledoit_wolf_shrinkage(constant_corr_market(0, 0.2, 500, 100).R)
    lam = bh_lambda_sequence(100, 0.01, 1e-3)
    prob = SolverProblem(S, penalty=lam)
    op = FactoredOperator(S, 1.0, 1.0)

    def admm(kn):
        k = prob.k
        w = np.full(k, 1.0 / k)
        v, alpha, beta, best = w.copy(), np.zeros(k), np.zeros(1), w.copy()
        kn.admm_loop(op.L, op.sigma, op.Kw, op.kb, prob.mu, prob.penalty, 1.0, 1.0,
                     False, w, v, alpha, beta, best, 1e-12, 400, 5)
        return best

    yield "admm 400 iterations k=100", admm

    def cycode(kn):
        w = np.full(100, 0.01)
        kn.cycode_loop(S, np.zeros(100), 1.0, 2e-3, w, 1e-12, 200)
        return w

    yield "cycode 200 sweeps k=100", cycode


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the NumPy fallback is available")
    mods = {b: get_backend(b) for b in backends}
    print(f"{'kernel':<28}" + "".join(f"{b + ' [ms]':>14}" for b in backends) + f"{'speed-up':>11}")
    for name, fn in cases(np.random.default_rng(0)):
        outs = [fn(mods[b]) for b in backends]
        if len(outs) == 2:
            if not np.allclose(outs[0], outs[1], rtol=1e-9, atol=1e-12):
                print(f"{name}: backends disagree", file=sys.stderr)
                return 1
        t = [median_time(lambda: fn(mods[b]), args.repeat) for b in backends]
        ratio = f"{t[-1] / t[0]:>10.1f}x" if len(t) == 2 else ""
        print(f"{name:<28}" + "".join(f"{x * 1e3:>14.3f}" for x in t) + ratio)
    return 0


if __name__ == "__main__":
    sys.exit(main())
