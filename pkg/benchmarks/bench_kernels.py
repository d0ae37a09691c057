#!/usr/bin/env python3
"""Benchmark the compiled MLP kernel against the numpy fallback.

Times single-input ``forward`` and ``forward_cached`` + ``vjp_input`` on the
production policy architecture (and a couple of smaller ones), checks that
both backends agree to float64 round-off, and prints per-call latency plus
the implied per-inference cost for an n-step Euler sampler.

Run from a checkout where the extension is built:

    python3 benchmarks/bench_kernels.py [--repeats 2000]
"""

import argparse
import time

import numpy as np

from rtchunk._kernels import ACT_TANH, BACKEND, Mlp, NumpyMlp

# (label, input dim, hidden widths, output dim); the first row is the shape
# the shipped policies use: 16 chunk + 8 obs + 8 tau embedding -> 16.
SHAPES = [
    ("policy 256x3", 32, (256, 256, 256), 16),
    ("small 64x2", 32, (64, 64), 16),
    ("wide 512x2", 32, (512, 512), 16),
]


def build_layers(in_dim, hidden, out_dim, rng):
    dims = [in_dim, *hidden, out_dim]
    weights = [rng.standard_normal((o, i)) / np.sqrt(i) for i, o in zip(dims[:-1], dims[1:])]
    biases = [rng.standard_normal(o) * 0.01 for o in dims[1:]]
    return weights, biases


def time_call(fn, repeats):
    # one warmup, then a single wall-clock window; single-threaded BLAS makes
    # per-call variance low enough that min-of-k is not worth the runtime
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_shape(label, in_dim, hidden, out_dim, repeats, rng):
    weights, biases = build_layers(in_dim, hidden, out_dim, rng)
    fast = Mlp(weights, biases, ACT_TANH)
    ref = NumpyMlp(weights, biases, ACT_TANH)
    x = rng.standard_normal(in_dim)
    cot = rng.standard_normal(out_dim)

    y_fast = fast.forward(x)
    y_ref = ref.forward(x)
    np.testing.assert_allclose(y_fast, y_ref, rtol=1e-12, atol=1e-12)
    _, cache_f = fast.forward_cached(x)
    _, cache_r = ref.forward_cached(x)
    np.testing.assert_allclose(
        fast.vjp_input(cache_f, cot), ref.vjp_input(cache_r, cot), rtol=1e-12, atol=1e-12
    )

    rows = {}
    for name, f, r in [
        ("forward", lambda: fast.forward(x), lambda: ref.forward(x)),
        (
            "fwd+vjp",
            lambda: fast.vjp_input(fast.forward_cached(x)[1], cot),
            lambda: ref.vjp_input(ref.forward_cached(x)[1], cot),
        ),
    ]:
        t_fast = time_call(f, repeats)
        t_ref = time_call(r, repeats)
        rows[name] = (t_fast, t_ref)
        print(
            f"{label:14s} {name:8s} compiled {t_fast * 1e6:8.2f} us   "
            f"numpy {t_ref * 1e6:8.2f} us   speedup {t_ref / t_fast:5.2f}x"
        )
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=2000, help="calls per timing window")
    ap.add_argument("--n-steps", type=int, default=5, help="Euler steps per inference")
    args = ap.parse_args()

    if BACKEND != "cython":
        print(
            "warning: compiled extension not importable; 'compiled' below is "
            "the numpy fallback timing itself"
        )
    print(f"active backend: {BACKEND}\n")

    rng = np.random.default_rng(0)
    rows = {}
    for label, in_dim, hidden, out_dim in SHAPES:
        rows[label] = bench_shape(label, in_dim, hidden, out_dim, args.repeats, rng)
        print()

    t_fast, t_ref = rows[SHAPES[0][0]]["forward"]
    n = args.n_steps
    print(
        f"unguided inference = {n} forward calls on the policy net:\n"
        f"  compiled {t_fast * n * 1e3:6.3f} ms   numpy {t_ref * n * 1e3:6.3f} ms"
    )
    t_fast_g, t_ref_g = rows[SHAPES[0][0]]["fwd+vjp"]
    print(
        f"guided inference   = {n} (forward + vjp) calls:\n"
        f"  compiled {t_fast_g * n * 1e3:6.3f} ms   numpy {t_ref_g * n * 1e3:6.3f} ms"
    )


if __name__ == "__main__":
    main()
