"""Time each hot kernel under the compiled and pure-Python backends.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import importlib
import timeit

import numpy as np


def cases(rng):
    scores = rng.normal(size=32)
    ranks = rng.permutation(32).astype(np.int64)
    mask = (rng.random((32, 48, 48)) < 0.3).astype(np.uint8)
    points = rng.normal(size=(20_000, 3))
    eq = np.array([[1.0, 0, 0, -1], [-1, 0, 0, -1], [0, 1, 0, -1], [0, -1, 0, -1], [0, 0, 1, -1], [0, 0, -1, -1]])
    img = rng.uniform(0, 255, size=(96, 96)).astype(np.float32)
    n = (96 - 10) ** 2
    dy = rng.integers(-5, 5, size=n).astype(np.int64)
    dx = rng.integers(-5, 5, size=n).astype(np.int64)
    return {
        "pairwise_hinge (bs=32)": lambda m: m.pairwise_hinge(scores, ranks, 0.2),
        "label_components (32x48x48)": lambda m: m.label_components(mask, 6),
        "points_in_halfspaces (20k)": lambda m: m.points_in_halfspaces(points, eq, 1e-9),
        "glass_swaps (96x96)": lambda m: m.glass_swaps(img.copy(), 5, dy, dx),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"python": importlib.import_module("slicesort._kernels._fallback")}
    try:
        backends["compiled"] = importlib.import_module("slicesort._kernels._core")
    except ImportError:
        print("compiled backend not built; timing the fallback only")

    rng = np.random.default_rng(0)
    print(f"{'kernel':32s}" + "".join(f"{b:>14s}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for name, fn in cases(rng).items():
        times = {}
        for b, mod in backends.items():
            number = 1 if b == "python" else 20
            times[b] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
        row = f"{name:32s}" + "".join(f"{times[b] * 1e3:12.3f}ms" for b in backends)
        if "compiled" in times:
            row += f"   {times['python'] / times['compiled']:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
