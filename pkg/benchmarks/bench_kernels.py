"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]
The numba path must be enabled (default); with MMISTS_NUMBA=0 only the numpy
timings are reported.
"""

import argparse
import time

import numpy as np

from mmists import kernels


def timeit(fn, *args, repeats=200):
    fn(*args)  # warm-up / JIT compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    logits = rng.normal(size=(64, 256))
    mask = (rng.uniform(size=256) < 0.8).astype(np.float64)
    grad = rng.normal(size=logits.shape)
    x = rng.normal(size=(128, 128))
    gx = rng.normal(size=x.shape)
    gamma = rng.normal(size=128)
    beta = rng.normal(size=128)
    src = rng.normal(size=(16, 48))
    p = rng.normal(size=(256, 256))
    g = rng.normal(size=(256, 256))
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    probs = kernels.NUMPY_KERNELS["softmax_rows"](logits, mask)
    _, xhat, inv_std = kernels.NUMPY_KERNELS["layer_norm_fwd"](x, gamma, beta, 1e-5)

    cases = {
        "softmax_rows": (logits, mask),
        "softmax_rows_vjp": (probs, grad, mask),
        "layer_norm_fwd": (x, gamma, beta, 1e-5),
        "layer_norm_vjp": (gx, xhat, inv_std, gamma),
        "bilinear_resize": (src, 224, 224),
        "adam_update": (p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001),
    }

    print(f"numba active: {kernels.USING_NUMBA}")
    header = f"{'kernel':<18} {'numpy (us)':>12} {'active (us)':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, case in cases.items():
        t_np = timeit(kernels.NUMPY_KERNELS[name], *case, repeats=args.repeats)
        t_active = timeit(kernels.ACTIVE_KERNELS[name], *case, repeats=args.repeats)
        speed = t_np / t_active if t_active > 0 else float("inf")
        print(f"{name:<18} {t_np * 1e6:>12.1f} {t_active * 1e6:>12.1f} {speed:>7.2f}x")


if __name__ == "__main__":
    main()
