"""Time the hot kernels on model-scale shapes, once per backend.

Run: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

import canvaseg._kernels as K


def bench(fn, repeats):
    fn()  # warmup
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    # shapes as the model sees them: 64x64 images, 16-channel features,
    # 17x17 RoIs, 33x33 logit patches
    x = rng.standard_normal((66, 66, 16)).astype(np.float32)
    kern = rng.standard_normal((3, 3, 16, 16)).astype(np.float32)
    gy = rng.standard_normal((64, 64, 16)).astype(np.float32)
    feat = rng.standard_normal((32, 32, 18)).astype(np.float32)
    patch = rng.standard_normal((33, 33)).astype(np.float32)
    gcanvas = rng.standard_normal((64, 64)).astype(np.float32)
    box = (3.2, 5.1, 58.7, 60.4)
    yield "conv2d fwd 64x64x16", lambda: K.conv2d_forward(x, kern, 1)
    yield "conv2d bwd 64x64x16", lambda: K.conv2d_backward(x, kern, 1, gy)
    yield "crop fwd 17x17", lambda: K.bilinear_crop_forward(
        feat, box[0] / 2, box[1] / 2, box[2] / 2, box[3] / 2, 17, 17)
    yield "crop bwd 17x17", lambda: K.bilinear_crop_backward(
        32, 32, box[0] / 2, box[1] / 2, box[2] / 2, box[3] / 2,
        rng.standard_normal((17, 17, 18)).astype(np.float32))
    yield "paste fwd 33->64", lambda: K.bilinear_paste_forward(
        patch, *box, 64, 64, -10000.0)
    yield "paste bwd 33->64", lambda: K.bilinear_paste_backward(
        33, 33, *box, gcanvas)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    names = K.available_backends()
    rows = []
    for label, fn in cases(np.random.default_rng(0)):
        timings = {}
        for name in names:
            K.set_backend(name)
            timings[name] = bench(fn, args.repeats)
        rows.append((label, timings))

    width = max(len(r[0]) for r in rows)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{n:>12}" for n in names)
    if len(names) > 1:
        header += f"  {'speedup':>8}"
    print(header)
    for label, timings in rows:
        line = f"{label:<{width}}  " + "  ".join(
            f"{timings[n] * 1e6:>10.1f}us" for n in names)
        if "python" in timings and "compiled" in timings:
            line += f"  {timings['python'] / timings['compiled']:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
