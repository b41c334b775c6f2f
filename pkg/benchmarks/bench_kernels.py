#!/usr/bin/env python3
"""Benchmark the jit-compiled kernels against the pure-numpy fallback.

Times the three hot paths (batch posteriors, batch losses, per-sample
gradient rows) on a mid-sized workload, checks that both backends agree
numerically, and prints the speedups. Run directly:

    python3 benchmarks/bench_kernels.py [--n 4096] [--classes 32] [--repeats 5]
"""

import argparse
import time

import numpy as np

from atlas_opt import kernels


def make_workload(n, num_classes, dim, p_dim, seed=0):
    rng = np.random.default_rng(seed)
    return {
        "text_emb": rng.standard_normal((num_classes, dim)),
        "images": rng.standard_normal((n, dim)),
        "targets": rng.dirichlet(np.ones(num_classes), size=n),
        "w_prompt": rng.standard_normal((dim, p_dim)),
    }


def time_call(fn, repeats):
    fn()  # warm-up (includes jit compilation on the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=4096, help="number of samples")
    parser.add_argument("--classes", type=int, default=32)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--p-dim", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not kernels.HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return

    w = make_workload(args.n, args.classes, args.dim, args.p_dim)
    tau = 0.5
    calls = {
        "batch_probs": lambda: kernels.batch_probs(w["text_emb"], w["images"], tau),
        "batch_losses": lambda: kernels.batch_losses(
            w["text_emb"], w["images"], tau, w["targets"]
        ),
        "batch_grads": lambda: kernels.batch_grads(
            w["text_emb"], w["images"], tau, w["targets"], w["w_prompt"]
        ),
    }

    print(f"workload: n={args.n} classes={args.classes} dim={args.dim} "
          f"p_dim={args.p_dim}, best of {args.repeats}")
    print(f"{'kernel':<14} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, fn in calls.items():
        with kernels.use_backend("numpy"):
            t_np = time_call(fn, args.repeats)
            ref = fn()
        with kernels.use_backend("numba"):
            t_nb = time_call(fn, args.repeats)
            got = fn()
        if not np.allclose(ref, got, rtol=1e-10, atol=1e-13):
            raise SystemExit(f"backend mismatch in {name}")
        print(f"{name:<14} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms {t_np / t_nb:>7.1f}x")
    print("backends agree to rtol 1e-10 on every kernel")


if __name__ == "__main__":
    main()
