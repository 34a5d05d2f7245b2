"""Time the compiled and numpy kernel backends on model-sized inputs.

    python3 benchmarks/bench_kernels.py --batch 16 --joints 5 --frames 16 --channels 64
"""
import argparse
import timeit

import numpy as np

from protogcn import kernels


def cases(batch, joints, frames, channels, ks, rng):
    adj = rng.normal(size=(batch, joints, joints, channels))
    feat = rng.normal(size=(batch, joints, frames, channels))
    grad = rng.normal(size=feat.shape)
    w = rng.normal(size=(ks, channels))
    return {
        "graph_apply": lambda m: kernels.graph_apply(adj, feat, impl=m),
        "graph_apply_backward": lambda m: kernels.graph_apply_backward(adj, feat, grad, impl=m),
        "temporal_conv": lambda m: kernels.temporal_conv(feat, w, impl=m),
        "temporal_conv_backward": lambda m: kernels.temporal_conv_backward(feat, w, grad, impl=m),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--joints", type=int, default=5)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--kernel-size", type=int, default=9)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    backends = kernels.available()
    if "cython" not in backends:
        print("compiled backend not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    print(f"shape B={args.batch} N={args.joints} T={args.frames} C={args.channels} K={args.kernel_size}")
    print(f"{'kernel':<24}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for name, fn in cases(args.batch, args.joints, args.frames, args.channels, args.kernel_size, rng).items():
        times = {}
        for backend, mod in backends.items():
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            times[backend] = min(timer.repeat(args.repeat, number)) / number
        row = f"{name:<24}" + "".join(f"{1e6 * t:>10.1f}us" for t in times.values())
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
