"""Benchmark the mixture log-likelihood kernels: numba path vs numpy path.

Both implementations are importable regardless of the COMPSEG_NUMBA setting,
so this script times them side by side on the shapes the pipeline actually
hits (crop positions x dictionary size) plus a larger stress shape.

Run:  python benchmarks/bench_kernels.py [--repeats 200]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from compseg import _kernels


def _inputs(rng: np.random.Generator, positions: int, k: int):
    cos = rng.uniform(-1.0, 1.0, size=(positions, k))
    sigma = rng.uniform(5.0, 40.0, size=k)
    log_z = rng.uniform(1.0, 20.0, size=k)
    coeffs = rng.uniform(0.05, 1.0, size=(positions, k))
    coeffs /= coeffs.sum(axis=1, keepdims=True)
    log_coeffs = np.log(coeffs)
    shared = np.log(coeffs[0])
    return cos, sigma, log_z, log_coeffs, shared


def _time(fn, args, repeats: int) -> float:
    fn(*args)  # warmup: first numba call pays compilation
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    shapes = [(24 * 24, 64), (44 * 44, 64), (200 * 200, 64)]

    print(f"active engine: {_kernels.engine()}  (numba available: {_kernels.HAS_NUMBA})")
    header = f"{'shape':>14}  {'variant':>8}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))

    for positions, k in shapes:
        cos, sigma, log_z, log_coeffs, shared = _inputs(rng, positions, k)
        rows = [
            ("per-pos", _kernels.mixture_loglik_numpy,
             _kernels.mixture_loglik_numba, (cos, sigma, log_z, log_coeffs)),
            ("shared", _kernels.shared_mixture_loglik_numpy,
             _kernels.shared_mixture_loglik_numba, (cos, sigma, log_z, shared)),
        ]
        for name, np_fn, nb_fn, inputs in rows:
            t_np = _time(np_fn, inputs, args.repeats)
            if nb_fn is None:
                print(f"{positions:>7}x{k:<6}  {name:>8}  {t_np*1e6:9.1f}u  {'-':>10}  {'-':>8}")
                continue
            t_nb = _time(nb_fn, inputs, args.repeats)
            ok = np.allclose(np_fn(*inputs), nb_fn(*inputs), rtol=1e-12, atol=1e-12)
            flag = "" if ok else "  MISMATCH"
            print(
                f"{positions:>7}x{k:<6}  {name:>8}  {t_np*1e6:9.1f}u  "
                f"{t_nb*1e6:9.1f}u  {t_np/t_nb:7.2f}x{flag}"
            )


if __name__ == "__main__":
    main()
