"""Benchmark the numba kernels against the pure-numpy fallbacks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 50 --batch 512

The numba column only appears when numba imported successfully and the
VCL_NUMBA environment flag did not disable it. The first numba call per
kernel compiles; compilation is excluded by a warmup pass.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from vcl.kernels import IMPLS, USING_NUMBA


def _time(fn, args, repeats: int) -> float:
    fn(*args)  # warmup; triggers JIT compilation on the numba path
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(batch: int, dim: int, image: int):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((batch, dim)).astype(np.float32)
    gout = rng.standard_normal((batch, batch)).astype(np.float32)
    src = rng.random((3, image, image)).astype(np.float32)
    p = rng.standard_normal((dim, dim)).astype(np.float32)
    g = rng.standard_normal((dim, dim)).astype(np.float32)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    return [
        ("pairwise_sqdist", (z,)),
        ("pairwise_sqdist_vjp", (z, gout)),
        ("bilinear_resize", (src, 16, 16)),
        ("adamw_update", (p, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8, 0.01)),
    ]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--batch", type=int, default=256)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--image", type=int, default=64)
    args = parser.parse_args()

    numba_impls = IMPLS["numba"]
    header = f"{'kernel':22s} {'numpy (ms)':>12s}"
    if numba_impls is not None:
        header += f" {'numba (ms)':>12s} {'speedup':>9s}"
    print(f"active path: {'numba' if USING_NUMBA else 'numpy'}")
    print(header)
    print("-" * len(header))

    for name, call_args in _cases(args.batch, args.dim, args.image):
        t_np = _time(IMPLS["numpy"][name], call_args, args.repeats)
        line = f"{name:22s} {t_np * 1e3:12.4f}"
        if numba_impls is not None:
            t_nb = _time(numba_impls[name], call_args, args.repeats)
            line += f" {t_nb * 1e3:12.4f} {t_np / t_nb:8.1f}x"
        print(line)


if __name__ == "__main__":
    main()
