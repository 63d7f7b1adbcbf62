"""Time the compiled and pure-Python convergence kernels side by side.

    python benchmarks/bench_kernels.py [--trials 200]

Both backends must agree trial for trial; the script checks that before
reporting speedups.
"""

import argparse
import time

from tracelab import _kernels_py
from tracelab.rng import derive_seed

try:
    from tracelab import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

CASES = [(3, 0.5), (9, 0.3), (18, 0.2), (18, 0.05)]


def _time(fn, n, p, seeds):
    t0 = time.perf_counter()
    out = [fn(n, p, s, 10**9) for s in seeds]
    return time.perf_counter() - t0, out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=200)
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled extension not built; only the pure-Python kernel is available")

    print(f"{'n':>3} {'p':>5} {'python s':>10} {'cython s':>10} {'speedup':>8}")
    for n, p in CASES:
        seeds = [derive_seed(99, n, p, t) for t in range(args.trials)]
        t_py, r_py = _time(_kernels_py.convergence_trial, n, p, seeds)
        if _kernels_c is None:
            print(f"{n:>3} {p:>5} {t_py:>10.3f} {'-':>10} {'-':>8}")
            continue
        t_c, r_c = _time(_kernels_c.convergence_trial, n, p, seeds)
        if r_c != r_py:
            raise SystemExit(f"backends disagree at n={n} p={p}")
        print(f"{n:>3} {p:>5} {t_py:>10.3f} {t_c:>10.3f} {t_py / t_c:>7.0f}x")


if __name__ == "__main__":
    main()
