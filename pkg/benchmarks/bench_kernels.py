#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the pure-numpy fallback.

Times the raw hot kernels (im2col, 2x2 max pooling forward/backward) on
embedding-sized inputs, plus a full conv2d forward+backward through the
autodiff layer under each backend. Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import os
import time

import numpy as np


def timeit(fn, repeats):
    fn()  # warm-up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_raw_kernels(repeats):
    from dam.diffcore import kernels

    backends = {"numpy": kernels.get_backend("numpy")}
    try:
        backends["cython"] = kernels.get_backend("cython")
    except ImportError:
        print("compiled extension not available; benchmarking numpy only")

    rng = np.random.default_rng(0)
    shapes = [(80, 32, 32, 3), (80, 16, 16, 64), (320, 8, 8, 64)]
    rows = []
    for shape in shapes:
        x = rng.standard_normal(shape).astype(np.float32)
        g = rng.standard_normal((shape[0], shape[1] // 2, shape[2] // 2, shape[3])).astype(np.float32)
        for name, be in backends.items():
            t_im2col = timeit(lambda: be.im2col(x, 3, 3), repeats)
            t_fwd = timeit(lambda: be.maxpool2x2_forward(x), repeats)
            _, arg = be.maxpool2x2_forward(x)
            t_bwd = timeit(lambda: be.maxpool2x2_backward(g, arg, shape[1], shape[2]), repeats)
            rows.append((f"{shape}", name, t_im2col, t_fwd, t_bwd))

    print(f"{'input':>22} {'backend':>8} {'im2col':>10} {'pool fwd':>10} {'pool bwd':>10}")
    for shape, name, a, b, c in rows:
        print(f"{shape:>22} {name:>8} {a * 1e3:>8.2f}ms {b * 1e3:>8.2f}ms {c * 1e3:>8.2f}ms")
    return rows


def bench_conv_autodiff(repeats):
    """Full conv2d forward + backward through the tape, per backend."""
    results = {}
    for name in ("numpy", "cython"):
        env = dict(os.environ, DAM_KERNELS=name)
        code = (
            "import time, numpy as np\n"
            "from dam.diffcore import Tensor, Tape, ops, kernels\n"
            f"assert kernels.BACKEND == {name!r}, kernels.BACKEND\n"
            "rng = np.random.default_rng(0)\n"
            "x = Tensor(rng.standard_normal((80, 16, 16, 64)).astype(np.float32), requires_grad=True)\n"
            "k = Tensor(rng.standard_normal((3, 3, 64, 64)).astype(np.float32), requires_grad=True)\n"
            "def step():\n"
            "    x.zero_grad(); k.zero_grad()\n"
            "    with Tape() as tape:\n"
            "        tape.backward(ops.sum_(ops.square(ops.conv2d(x, k))))\n"
            "step()\n"
            "best = min((lambda t0=time.perf_counter(): (step(), time.perf_counter() - t0)[1])()\n"
            f"           for _ in range({repeats}))\n"
            "print('%.6f' % best)\n"
        )
        import subprocess
        import sys

        proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"conv2d ({name}): skipped ({proc.stderr.strip().splitlines()[-1]})")
            continue
        results[name] = float(proc.stdout.strip())
        print(f"conv2d fwd+bwd [80,16,16,64]x[3,3,64,64] ({name}): {results[name] * 1e3:.2f}ms")
    if len(results) == 2:
        print(f"speedup cython vs numpy: {results['numpy'] / results['cython']:.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    bench_raw_kernels(args.repeats)
    print()
    bench_conv_autodiff(args.repeats)


if __name__ == "__main__":
    main()
