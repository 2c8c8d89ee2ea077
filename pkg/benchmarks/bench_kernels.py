"""Compare the numba and pure-numpy image kernels.

    python3 benchmarks/bench_kernels.py [--size 1024] [--repeat 5]

Each kernel is run once per backend to warm up (JIT compile), then timed as
the best of ``--repeat`` runs. Outputs are checked to agree before timing.
"""

import argparse
import time

import numpy as np

from fsenet import kernels, metrics, pyramid
from fsenet._accel import HAVE_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(size, rng):
    img = rng.random((size, size, 3))
    small = rng.random((size // 2, size // 2, 3))
    other = np.clip(img + 0.05 * rng.normal(size=img.shape), 0, 1)
    return {
        "blur_decimate": lambda b: kernels.blur_decimate(img, backend=b),
        "upsample_blur": lambda b: kernels.upsample_blur(small, backend=b),
        "resize x1.5": lambda b: kernels.resize(img, size * 3 // 2, size * 3 // 2, backend=b),
        "ssim": lambda b: metrics.ssim(img, other, backend=b),
        "pyramid d=3": lambda b: pyramid.reconstruct(pyramid.decompose(img, 3, backend=b), backend=b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fn in cases(args.size, rng).items():
        a, b = fn("numba"), fn("numpy")
        if not np.allclose(a, b, atol=1e-10):
            raise SystemExit(f"{name}: backends disagree")
        t_nb = best_of(lambda: fn("numba"), args.repeat)
        t_np = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:<16}{1e3 * t_nb:>10.2f}{1e3 * t_np:>10.2f}{t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
