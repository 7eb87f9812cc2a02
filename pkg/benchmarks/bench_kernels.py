"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Each kernel is called once per backend before timing so JIT compilation is
not counted. Prints best-of-repeat wall time per call and the speedup.
"""

import argparse
import time

import numpy as np

from rectlab import _kernels
from rectlab.oracle import mixture_preset


def best_time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    mix = mixture_preset("ring8")
    evals, evecs = np.linalg.eigh(mix.covs)
    n = 8192
    x = rng.standard_normal((n, 2)) * 2
    alpha = rng.uniform(0.1, 1.0, n)
    sigma = np.sqrt(1 - alpha**2) + 1e-3
    log_w = np.log(mix.weights)
    p = rng.standard_normal(50_000)
    g = rng.standard_normal(50_000)
    h = rng.standard_normal((256, 128))

    def gmm(impl):
        return lambda: impl.gmm_score(x, alpha, sigma, log_w, mix.means, evecs, evals)

    def adam(impl):
        m, v, q = np.zeros_like(p), np.zeros_like(p), p.copy()
        return lambda: impl.adam(q, g, m, v, 2e-4, 0.9, 0.999, 1e-8, 10)

    def ema(impl):
        t = p.copy()
        return lambda: impl.ema(t, g, 0.99)

    def silu(impl):
        return lambda: impl.silu_fwd(h)

    return [("gmm_score n=8192 K=8", gmm), ("adam 50k params", adam), ("ema 50k params", ema),
            ("silu_fwd 256x128", silu)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _kernels.numba_impl is None:
        print("numba is not available; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>10}")
    for name, make in cases(rng):
        t_np = best_time(make(_kernels.numpy_impl), args.repeat)
        t_nb = best_time(make(_kernels.numba_impl), args.repeat)
        print(f"{name:<24}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.2f}x")


if __name__ == "__main__":
    main()
