"""Time the numba kernels against the pure-numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``. Both paths are always
importable, so the environment flag is not needed here. Results are checked
for agreement before anything is timed.
"""
import argparse
import timeit

import numpy as np

from raildelay import kernels


def risk_inputs(rng, n_rows, p):
    start = np.round(rng.uniform(0, 200, n_rows), 3)
    stop = start + np.round(rng.uniform(0.5, 40, n_rows), 3)
    phi = np.exp(rng.normal(0, 0.5, n_rows))
    X = rng.normal(size=(n_rows, p))
    times = np.unique(stop[rng.random(n_rows) < 0.3])
    return start, stop, phi, X, times


def expm_inputs(rng, n_mats, k):
    # generator matrices with hourly-scale rates, as in the panel likelihood
    Q = rng.uniform(0, 2, (n_mats, k, k))
    for q in Q:
        np.fill_diagonal(q, 0)
        np.fill_diagonal(q, -q.sum(axis=1))
    return Q * rng.uniform(0.05, 3, (n_mats, 1, 1))


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)

    cases = []
    for n_rows in (2_000, 20_000, 100_000):
        a = risk_inputs(rng, n_rows, 3)
        cases.append((f"risk_set_sums  rows={n_rows}", kernels.risk_set_sums_numpy,
                      kernels.risk_set_sums_numba, a))
    for n_mats in (100, 2_000, 20_000):
        a = (expm_inputs(rng, n_mats, 2),)
        cases.append((f"expm_batch 2x2 n={n_mats}", kernels.expm_batch_numpy,
                      kernels.expm_batch_numba, a))
    a = (expm_inputs(rng, 2_000, 4),)
    cases.append(("expm_batch 4x4 n=2000", kernels.expm_batch_numpy, kernels.expm_batch_numba, a))

    print(f"{'case':<32}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for label, f_np, f_nb, a in cases:
        # warm-up compiles the numba path and checks agreement
        r_np, r_nb = f_np(*a), f_nb(*a)
        pairs = zip(r_np, r_nb) if isinstance(r_np, tuple) else [(r_np, r_nb)]
        for u, v in pairs:
            # running sums lose a few ulps of the largest entry near zero
            np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-12 * np.abs(u).max())
        number = 3 if "100000" in label or "20000" in label else 20
        t_np = best_of(lambda: f_np(*a), args.repeat, number)
        t_nb = best_of(lambda: f_nb(*a), args.repeat, number)
        print(f"{label:<32}{1e3 * t_np:>11.3f}{1e3 * t_nb:>11.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
