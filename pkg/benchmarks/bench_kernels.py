#!/usr/bin/env python3
"""Benchmark the compiled convolution kernels against the numpy fallback.

Times the forward pass, both gradient kernels and one full training step per
backend on layer shapes taken from the shipped networks.  Run after
installing the package:

    python benchmarks/bench_kernels.py
"""

import argparse
import time

import numpy as np

from spdnn.engine import kernels, ops
from spdnn.engine.network import ParameterStore, run_backward, run_forward
from spdnn.engine.train import TrainConfig
from spdnn.merge import spdnn_merge
from spdnn.nets import load_all

SHAPES = [
    # (kernel, in_channels, out_channels), batch 16 at 32x32
    (7, 1, 6),
    (7, 6, 6),
    (3, 17, 17),
    (5, 8, 8),
    (9, 8, 8),
    (11, 8, 1),
]


def time_call(fn, reps):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def bench_kernels(reps):
    rng = np.random.default_rng(0)
    rows = []
    for k, ci, co in SHAPES:
        x = rng.standard_normal((16, ci, 32, 32)).astype(np.float32)
        w = rng.standard_normal((k, k, ci, co)).astype(np.float32)
        b = np.zeros(co, np.float32)
        dy = rng.standard_normal((16, co, 32, 32)).astype(np.float32)
        flops = 2 * 16 * 32 * 32 * k * k * ci * co
        row = {"shape": f"k={k} cin={ci} cout={co}"}
        for name in kernels.available_backends():
            kernels.use_backend(name)
            fwd = time_call(lambda: kernels.conv2d_forward(x, w, b), reps)
            gin = time_call(lambda: kernels.conv2d_grad_input(w, dy), reps)
            gw = time_call(lambda: kernels.conv2d_grad_weights(x, dy, k), reps)
            row[name] = (fwd, gin, gw, flops / fwd / 1e9)
        rows.append(row)
    return rows


def bench_train_step(reps):
    merged = spdnn_merge(load_all())
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(16, 1, 32, 32)).astype(np.float32)
    t = (rng.uniform(size=(16, 1, 32, 32)) > 0.8).astype(np.float32)

    out = {}
    for name in kernels.available_backends():
        kernels.use_backend(name)
        store = ParameterStore.init(merged, np.random.default_rng(2))

        def step():
            pred, caches = run_forward(merged, store, x, mode="train")
            _, dpred = ops.bce_loss(pred, t)
            run_backward(merged, store, caches, dpred)

        out[name] = time_call(step, reps)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=10)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    if "compiled" not in backends:
        print("note: compiled extension not built; showing numpy only")

    print("\nper-kernel timings (ms per call, batch 16 at 32x32):")
    header = f"{'layer':>22}"
    for name in backends:
        header += f" | {name + ' fwd':>12} {'grad_in':>9} {'grad_w':>9} {'GFLOP/s':>8}"
    print(header)
    for row in bench_kernels(args.reps):
        line = f"{row['shape']:>22}"
        for name in backends:
            fwd, gin, gw, gflops = row[name]
            line += f" | {fwd * 1e3:12.2f} {gin * 1e3:9.2f} {gw * 1e3:9.2f} {gflops:8.1f}"
        print(line)

    print("\nfull train step on the merged example network (batch 16):")
    steps = bench_train_step(max(3, args.reps // 2))
    for name, dt in steps.items():
        print(f"  {name:>9}: {dt * 1e3:8.1f} ms")
    if len(steps) == 2:
        print(f"  speedup: {steps['numpy'] / steps['compiled']:.2f}x (compiled over numpy)")

    kernels._select_initial()


if __name__ == "__main__":
    main()
