"""Compiled vs numpy kernel backends: dense and CSR forward passes of a wide MLP.

    python benchmarks/bench_backends.py --width 1024 --sparsity 0.65
"""
import argparse
import statistics
import time

import numpy as np

from sparsebench import kernels
from sparsebench.csr import to_csr
from sparsebench.prune import compute_mask


def make_layers(width, depth, sparsity, seed):
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(depth):
        w = (rng.standard_normal((width, width)) / np.sqrt(width)).astype(np.float32)
        w *= compute_mask(w, sparsity)
        layers.append((w, to_csr(w), rng.standard_normal(width).astype(np.float32)))
    return layers


def dense_pass(k, layers, x):
    for w, _, b in layers:
        x = k.dense_matvec_bias(w, x, b)
        k.relu_inplace(x)
    return x


def sparse_pass(k, layers, x):
    for _, c, b in layers:
        x = k.spmv_bias(c.values, c.col_idx, c.row_ptr, x, b)
        k.relu_inplace(x)
    return x


def time_ms(fn, inputs, repeats):
    for x in inputs:  # warm-up
        fn(x)
    per = []
    for _ in range(repeats):
        t = time.perf_counter()
        for x in inputs:
            fn(x)
        per.append((time.perf_counter() - t) / len(inputs) * 1e3)
    return statistics.median(per)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--width", type=int, default=1024)
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--sparsity", type=float, default=0.65)
    ap.add_argument("--samples", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    layers = make_layers(args.width, args.depth, args.sparsity, args.seed)
    inputs = np.random.default_rng(args.seed + 1).standard_normal((args.samples, args.width))
    print(f"{args.depth} x {args.width} layers, sparsity {args.sparsity}, median of {args.repeats}")
    print(f"{'backend':8s} {'dense_ms':>10s} {'sparse_ms':>10s} {'speedup':>8s}")
    ref = None
    for name in kernels.available_backends():
        k = kernels.load_backend(name)
        out = sparse_pass(k, layers, inputs[0])
        if ref is None:
            ref = out
        assert np.allclose(out, ref, atol=1e-6), "backends disagree"
        d = time_ms(lambda x: dense_pass(k, layers, x), inputs, args.repeats)
        s = time_ms(lambda x: sparse_pass(k, layers, x), inputs, args.repeats)
        print(f"{name:8s} {d:10.4f} {s:10.4f} {d / s:8.2f}")


if __name__ == "__main__":
    main()
