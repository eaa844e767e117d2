"""Throughput comparison of the two convolution backends.

Runs forward, input-gradient and kernel-gradient convolutions over the
shapes the default model actually uses and reports GMAC/s per backend.
The jit path is warmed once per shape so compilation is not timed. Run:

    python3 benchmarks/bench_kernels.py [--repeat 5] [--dtype f32]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gantransfer.kernels import jit, reference

# (n, c_in, h, w, c_out, kh, kw, stride) for the stem, one block per stage,
# and the 1x1 projections.
MODEL_SHAPES = [
    ("stem 3x3/2", (32, 3, 64, 64, 16, 3, 3, 2)),
    ("stage0 3x3/2", (32, 16, 32, 32, 16, 3, 3, 2)),
    ("stage1 3x3/2", (32, 16, 16, 16, 32, 3, 3, 2)),
    ("stage2 3x3/2", (32, 32, 8, 8, 48, 3, 3, 2)),
    ("stage3 3x3/2", (32, 48, 4, 4, 64, 3, 3, 2)),
    ("proj 1x1/2", (32, 16, 16, 16, 32, 1, 1, 2)),
    ("block 3x3/1", (32, 32, 8, 8, 32, 3, 3, 1)),
]


def _macs(n, c, oh, ow, o, kh, kw):
    return n * o * oh * ow * c * kh * kw


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_shape(name, shape, dtype, repeat):
    n, c, h, w, o, kh, kw, stride = shape
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, c, h, w)).astype(dtype)
    k = rng.standard_normal((o, c, kh, kw)).astype(dtype)
    pad = kh // 2
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.standard_normal((n, o, oh, ow)).astype(dtype)
    macs = _macs(n, c, oh, ow, o, kh, kw)

    rows = []
    for label, mod in (("numba", jit), ("numpy", reference)):
        hp, wp = xp.shape[2], xp.shape[3]
        fwd = lambda: mod.conv2d_forward(xp, k, stride)
        bwd_in = lambda: mod.conv2d_backward_input(dy, k, stride, hp, wp)
        bwd_k = lambda: mod.conv2d_backward_kernel(dy, xp, kh, kw, stride)
        for f in (fwd, bwd_in, bwd_k):
            f()  # warm-up (jit compile, numpy cache)
        rows.append((
            label,
            macs / _time(fwd, repeat) / 1e9,
            macs / _time(bwd_in, repeat) / 1e9,
            macs / _time(bwd_k, repeat) / 1e9,
        ))

    ref = reference.conv2d_forward(xp, k, stride)
    got = jit.conv2d_forward(xp, k, stride)
    tol = 1e-4 if dtype == np.float32 else 1e-10
    ok = np.allclose(ref, got, rtol=tol, atol=tol * np.abs(ref).max())
    print(f"\n{name}  n={n} c={c} hxw={h}x{w} o={o} k={kh}x{kw}/{stride}  "
          f"({macs/1e6:.1f} MMAC)  agree={ok}")
    print(f"  {'backend':8} {'fwd':>10} {'bwd_in':>10} {'bwd_k':>10}   [GMAC/s]")
    for label, gf, gi, gk in rows:
        print(f"  {label:8} {gf:10.2f} {gi:10.2f} {gk:10.2f}")
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    args = ap.parse_args()
    dtype = np.float32 if args.dtype == "f32" else np.float64

    totals = {"numba": np.zeros(3), "numpy": np.zeros(3)}
    counts = 0
    for name, shape in MODEL_SHAPES:
        rows = bench_shape(name, shape, dtype, args.repeat)
        for label, gf, gi, gk in rows:
            totals[label] += (gf, gi, gk)
        counts += 1
    print("\nmean GMAC/s over model shapes:")
    for label, acc in totals.items():
        gf, gi, gk = acc / counts
        print(f"  {label:8} fwd {gf:.2f}  bwd_in {gi:.2f}  bwd_k {gk:.2f}")


if __name__ == "__main__":
    main()
