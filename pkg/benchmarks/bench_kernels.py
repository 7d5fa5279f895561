"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from colora import kernels

# (n, c, h, w, k): a generator conv at 32px, a mid-size conv, a 1x1 and a batch of critic inputs
CASES = [(4, 12, 32, 32, 3), (8, 48, 16, 16, 3), (8, 48, 8, 8, 1), (24, 3, 32, 32, 3)]


def bench(fn, repeat: int) -> float:
    """Best-of-``repeat`` time per call in microseconds."""
    number = 5
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e6


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'shape':<20}" + "".join(f"{name + ' us':>14}" for name in impls) + f"{'speedup':>10}")
    for n, c, h, w, k in CASES:
        xp = rng.standard_normal((n, c, h + k - 1, w + k - 1)).astype(np.float32)
        cols = rng.standard_normal((c * k * k, n * h * w)).astype(np.float32)
        x = rng.standard_normal((n, c, h, w)).astype(np.float32)
        up = rng.standard_normal((n, c, 2 * h, 2 * w)).astype(np.float32)
        calls = {
            "im2col": (lambda m: m.im2col(xp, k, h, w), xp),
            "col2im": (lambda m: m.col2im(cols, n, c, h, w, k), cols),
            "upsample2x": (lambda m: m.upsample2x(x), x),
            "upsample2x_backward": (lambda m: m.upsample2x_backward(up), up),
            "avgpool2x": (lambda m: m.avgpool2x(up), up),
            "avgpool2x_backward": (lambda m: m.avgpool2x_backward(x), x),
        }
        for name, (call, arg) in calls.items():
            times = {b: bench(lambda m=m: call(m), args.repeat) for b, m in impls.items()}
            ratio = times["numpy"] / times["cython"] if "cython" in times else float("nan")
            shape = "x".join(map(str, arg.shape))
            print(f"{name:<22}{shape:<20}" + "".join(f"{t:>14.1f}" for t in times.values()) + f"{ratio:>9.2f}x")


if __name__ == "__main__":
    main()
