"""Time the compiled convolution kernels against the NumPy fallback.

Runs conv3d forward and backward, and one U-Net training step, with every
available backend (the compiled core at each SIMD level it supports, then the
pure-Python fallback) and prints median wall times and speed-ups.

    python benchmarks/bench_kernels.py [--repeat 5] [--float64]
"""

import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from ethcast.autotensor import available_backends, conv3d_backward, conv3d_forward, get_kernels
from ethcast.unet3d import ModelConfig, UNet3D

# (batch, channels in, channels out, frames, rows, cols): shapes met by the
# default three-level model on a 64x64 grid
CONV_SHAPES = [
    (2, 2, 8, 4, 64, 64),
    (2, 16, 16, 4, 32, 32),
    (2, 32, 32, 4, 16, 16),
]


def median_time(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def backends():
    """(label, kernel module, simd level or None) for every runnable configuration."""
    out = []
    if "compiled" in available_backends():
        ck = get_kernels("compiled")
        for level in ck.simd_levels():
            out.append((f"compiled/{level}", ck, level))
    out.append(("python", get_kernels("python"), None))
    return out


def bench_conv(shape, dtype, kernels, repeat):
    b, ci, co, t, h, w = shape
    rng = np.random.default_rng(0)
    x = rng.standard_normal((b, ci, t, h, w)).astype(dtype)
    wt = rng.standard_normal((co, ci, 3, 3, 3)).astype(dtype)
    bias = np.zeros(co, dtype=dtype)
    g = rng.standard_normal((b, co, t, h, w)).astype(dtype)
    fwd = median_time(lambda: conv3d_forward(x, wt, bias, kernels=kernels), repeat)
    bwd = median_time(lambda: conv3d_backward(g, x, wt, kernels=kernels), repeat)
    return fwd, bwd


def bench_step(dtype, repeat):
    """One forward/backward pass of the default model on a batch of two, with the active backend."""
    model = UNet3D(ModelConfig(in_channels=2)).astype(dtype)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 2, 4, 64, 64)).astype(dtype)
    r = rng.standard_normal((2, 18, 64, 64)).astype(dtype)

    def step():
        model.zero_grad()
        model.forward(x)
        model.backward(r)

    return median_time(step, repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--float64", action="store_true", help="benchmark in float64 instead of float32")
    ap.add_argument("--step-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    dtype = np.float64 if args.float64 else np.float32
    if args.step_only:
        print(f"{1e3 * bench_step(dtype, args.repeat):.1f}")
        return

    configs = backends()
    print(f"dtype {np.dtype(dtype).name}, median of {args.repeat} runs, times in ms")
    print(f"{'shape (B,Ci,Co,T,H,W)':<26} {'backend':<18} {'forward':>10} {'backward':>10} {'speed-up':>9}")
    for shape in CONV_SHAPES:
        rows = []
        for label, kernels, level in configs:
            if level is not None:
                kernels.set_simd(level)
            rows.append((label, *bench_conv(shape, dtype, kernels, args.repeat)))
        ref = rows[-1][1] + rows[-1][2]
        for label, fwd, bwd in rows:
            print(f"{str(shape):<26} {label:<18} {1e3 * fwd:>10.2f} {1e3 * bwd:>10.2f} {ref / (fwd + bwd):>8.1f}x")

    # the model uses the backend chosen at import, so each one runs in a fresh process
    print("\nU-Net forward+backward, batch 2, 64x64, two input channels")
    for label, _, level in configs:
        env = dict(os.environ)
        env["ETHCAST_KERNELS"] = "python" if level is None else "compiled"
        if level is not None:
            env["ETHCAST_SIMD"] = level
        out = subprocess.run([sys.executable, __file__, "--step-only", "--repeat", str(args.repeat)]
                             + (["--float64"] if args.float64 else []),
                             env=env, capture_output=True, text=True, check=True).stdout.strip()
        print(f"  {label:<18} {out} ms")


if __name__ == "__main__":
    main()
