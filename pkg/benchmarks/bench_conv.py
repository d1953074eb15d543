"""Time the compiled convolution kernels against the numpy fallback.

Usage: python3 benchmarks/bench_conv.py [--repeat N] [--csv out.csv]

Each row times one kernel (forward, input gradient, kernel gradient) on one
shape for both backends, checks that the outputs are bitwise equal, and
reports the speedup.  Shapes are [batch, width, length, channels] with a 3x3
kernel, covering the training configurations used by the test suite.
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from neuralgpu import _conv_fallback as fallback

try:
    from neuralgpu import _conv_kernels as compiled
except ImportError:
    compiled = None

SHAPES = [(1, 4, 8, 32), (16, 4, 8, 32), (16, 4, 16, 32), (64, 4, 16, 32), (16, 4, 32, 64)]


def cases(shape, dtype, rng):
    b, w, n, m = shape
    s = rng.standard_normal(shape).astype(dtype)
    k = rng.standard_normal((3, 3, m, m)).astype(dtype)
    g = rng.standard_normal(shape).astype(dtype)
    return {
        "forward": lambda mod: mod.conv_forward(s, k),
        "grad_input": lambda mod: mod.conv_grad_input(g, k),
        "grad_kernel": lambda mod: mod.conv_grad_kernel(s, g, k.shape),
    }


def best_ms(fn, repeat):
    number = 5
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1000


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--csv", default=None)
    args = parser.parse_args(argv)
    if compiled is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    rows = []
    for dtype in (np.float32, np.float64):
        for shape in SHAPES:
            for op, fn in cases(shape, dtype, rng).items():
                same = np.array_equal(fn(compiled), fn(fallback))
                fast = best_ms(lambda: fn(compiled), args.repeat)
                slow = best_ms(lambda: fn(fallback), args.repeat)
                rows.append({"dtype": np.dtype(dtype).name, "shape": "x".join(map(str, shape)), "op": op,
                             "compiled_ms": fast, "fallback_ms": slow, "speedup": slow / fast,
                             "bitwise_equal": same})
    header = f"{'dtype':8} {'shape':12} {'op':12} {'compiled ms':>12} {'fallback ms':>12} {'speedup':>8}  equal"
    print(header)
    for r in rows:
        print(f"{r['dtype']:8} {r['shape']:12} {r['op']:12} {r['compiled_ms']:12.3f} "
              f"{r['fallback_ms']:12.3f} {r['speedup']:8.2f}  {r['bitwise_equal']}")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return 0 if all(r["bitwise_equal"] for r in rows) else 2


if __name__ == "__main__":
    sys.exit(main())
