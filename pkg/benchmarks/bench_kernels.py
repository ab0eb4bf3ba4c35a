"""Numba versus numpy timings for the resonance-table kernels.

    python benchmarks/bench_kernels.py [--sizes 200,800,2000] [--repeat 5]

Each kernel is run once per backend to warm up (numba compiles on first
call), then timed ``--repeat`` times; the best time is reported.  Results
are also checked for agreement so a speedup never hides a wrong answer.
"""

import argparse
import time

import numpy as np

from cqad import _kernels


def _tables(n, rng):
    # spacings of a random mode set: the shape the collision audit feeds in
    freqs = np.sort(rng.uniform(0.0, 1e9, n))
    i, j = np.triu_indices(n, 1)
    table = freqs[j] - freqs[i]
    target = table[: min(table.size, 4 * n)]
    self_idx = np.arange(target.size, dtype=np.int64)
    return target, table, self_idx


def _best(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100,300,600")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    if not _kernels.HAVE_NUMBA:
        print("numba unavailable (or CQAD_DISABLE_NUMBA set): timing the numpy path only")

    print(f"{'kernel':<14}{'modes':>7}{'pairs':>10}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>9}")
    for n in (int(s) for s in args.sizes.split(",")):
        target, table, self_idx = _tables(n, rng)
        cases = {
            "min_detuning": lambda nb: _kernels.min_detuning(target, table, self_idx, use_numba=nb),
            "crowding_sums": lambda nb: _kernels.crowding_sums(target, table, self_idx, 1e6, use_numba=nb),
        }
        for name, run in cases.items():
            t_np = _best(lambda: run(False), args.repeat)
            if _kernels.HAVE_NUMBA:
                t_nb = _best(lambda: run(True), args.repeat)
                a, b = run(False), run(True)
                for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
                    np.testing.assert_allclose(x, y, rtol=1e-12)
                print(f"{name:<14}{n:>7}{table.size:>10}{t_np:>12.4g}{t_nb:>12.4g}{t_np / t_nb:>9.1f}")
            else:
                print(f"{name:<14}{n:>7}{table.size:>10}{t_np:>12.4g}{'-':>12}{'-':>9}")


if __name__ == "__main__":
    main()
