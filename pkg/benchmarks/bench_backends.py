#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the three hot paths (batch forward, fused loss+gradients, Adam
update) plus the pairwise-distance kernel on the default experiment
model.  The first numba call is excluded so JIT compilation does not
pollute the numbers.

Run: python benchmarks/bench_backends.py [--batch 32] [--repeat 200]
"""

import argparse
import time

import numpy as np

from cefl import _kernels_numba, _kernels_numpy
from cefl.flcore import DEFAULT_LAYER_SPECS
from cefl.model import init_model


def time_call(fn, *args, repeat):
    fn(*args)                      # warmup / JIT
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()

    m = init_model(DEFAULT_LAYER_SPECS, 0)
    rng = np.random.default_rng(0)
    x = rng.random((args.batch, m.input_dim))
    y = rng.integers(0, m.n_classes, size=args.batch)
    grad = rng.normal(size=m.n_params)
    m2 = init_model(DEFAULT_LAYER_SPECS, 1)

    backends = [("numpy", _kernels_numpy), ("numba", _kernels_numba)]
    cases = {
        "forward_batch": lambda k: time_call(
            k.forward_batch, m.theta, m.in_dims, m.out_dims, m.offsets,
            m.relu_mask, x, repeat=args.repeat),
        "loss_grads_batch": lambda k: time_call(
            k.loss_grads_batch, m.theta, m.in_dims, m.out_dims, m.offsets,
            m.relu_mask, x, y, repeat=args.repeat),
        "adam_update": lambda k: time_call(
            k.adam_update, m.theta.copy(), grad, np.zeros(m.n_params),
            np.zeros(m.n_params), 1, 1e-4, 0.9, 0.999, 1e-8,
            repeat=args.repeat),
        "pair_distance": lambda k: time_call(
            k.pair_distance_flat, m.theta, m2.theta, m.offsets,
            repeat=args.repeat),
    }

    print(f"model {'-'.join(str(s.output_dim) for s in DEFAULT_LAYER_SPECS)}"
          f", batch {args.batch}, {args.repeat} reps, times in us/call\n")
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name, _ in backends)
          + f"{'speedup':>10}")
    for case, runner in cases.items():
        times = [runner(mod) for _, mod in backends]
        ratio = times[0] / times[1] if times[1] else float("inf")
        print(f"{case:<18}" + "".join(f"{t * 1e6:>12.1f}" for t in times)
              + f"{ratio:>9.2f}x")


if __name__ == "__main__":
    main()
