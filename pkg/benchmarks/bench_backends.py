"""Time the compiled and pure-Python backends side by side.

    python benchmarks/bench_backends.py [--side 384] [--repeat 3]

Per-kernel rows use shapes that occur in the default network; the last rows
time a whole forward pass for the full and lite variants.
"""
import argparse
import statistics
import timeit

import numpy as np

from edn import graph, kernels, layers
from edn.distance import nearest_feature
from edn.layers import ConvSpec


def conv_cases(side):
    half = side // 2
    return {
        "conv3x3 16->16": (ConvSpec.same(16, 16), side),
        "conv3x3 dil4 8->8": (ConvSpec.same(8, 8, dilation=4), half),
        "depthwise3x3 32": (ConvSpec.same(32, 32, groups=32), half),
        "pointwise 64->32": (ConvSpec.same(64, 32, k=1), half),
    }


def median_time(fn, repeat):
    return statistics.median(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--side", type=int, default=384)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = sorted(kernels.BACKENDS)
    if "compiled" not in backends:
        print("compiled backend not built; timing python only")
    rng = np.random.default_rng(0)

    rows = []
    for name, (spec, hw) in conv_cases(args.side).items():
        x = rng.standard_normal((1, spec.c_in, hw, hw)).astype(np.float32)
        p = layers.init_params(spec, 0, batchnorm=False)
        rows.append((name, {b: median_time(lambda: layers.conv2d(x, spec, p, b), args.repeat) for b in backends}))

    mask = rng.random((args.side, args.side)) < 0.3
    rows.append(("nearest_feature", {b: median_time(lambda: nearest_feature(mask, b), args.repeat)
                                     for b in backends}))

    image = rng.random((1, 3, args.side, args.side), dtype=np.float32)
    for lite in (False, True):
        model = graph.build_model(graph.NetworkConfig(lite=lite, input_side=args.side))
        rows.append((f"forward {'lite' if lite else 'full'}",
                     {b: median_time(lambda: graph.forward(model, image, b), args.repeat) for b in backends}))

    print(f"{'case':22s}" + "".join(f"{b:>12s}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for name, times in rows:
        line = f"{name:22s}" + "".join(f"{times[b]:12.4f}" for b in backends)
        if "compiled" in times:
            line += f"{times['python'] / times['compiled']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
