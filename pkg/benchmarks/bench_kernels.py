"""Compiled vs numpy kernels: per-kernel timings and one full training step.

    python benchmarks/bench_kernels.py [--repeat 20] [--steps 3]

Kernel shapes are the ones the default 32x32 model hits.  The training-step
comparison runs each backend in a subprocess because the backend is chosen at
import time (``DUALATTN_KERNELS=python`` forces the fallback).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dualattn import kernels

# (label, input shape, kernel, stride, pad)
CONV_CASES = [
    ("gen 32x32 c16 3x3", (8, 16, 32, 32), 3, 1, 1),
    ("gen 16x16 c32 3x3", (8, 32, 16, 16), 3, 1, 1),
    ("disc 32->16 s2", (8, 16, 32, 32), 3, 2, 1),
    ("disc 8->4 s2", (8, 64, 8, 8), 3, 2, 1),
]

STEP_SNIPPET = """
import time
from dualattn import config as C, trainer as TR, kernels
cfg = C.build()[0]
state = TR.init_state(cfg)
train = TR.make_datasets(cfg)[0]
TR.train_step(state, train)
t0 = time.perf_counter()
TR.train(state, train, {steps})
print(kernels.BACKEND, (time.perf_counter() - t0) / {steps})
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(repeat):
    py, cy = kernels.python_backend, kernels.compiled_backend
    rng = np.random.default_rng(0)
    rows = []
    for label, shape, k, stride, pad in CONV_CASES:
        x = rng.standard_normal(shape)
        cols = py.im2col(x, k, k, stride, pad)
        g = rng.standard_normal(cols.shape)
        for name, f_py, f_cy in (
                ("im2col", lambda: py.im2col(x, k, k, stride, pad),
                 lambda: cy.im2col(x, k, k, stride, pad)),
                ("col2im", lambda: py.col2im(g, shape, k, k, stride, pad),
                 lambda: cy.col2im(g, shape, k, k, stride, pad))):
            rows.append((f"{name} {label}", best(f_py, repeat), best(f_cy, repeat)))
    x = rng.standard_normal((8, 32, 16, 16))
    y = rng.standard_normal((8, 32, 32, 32))
    rows.append(("upsample2x 16->32", best(lambda: py.upsample2x(x), repeat),
                 best(lambda: cy.upsample2x(x), repeat)))
    rows.append(("sumpool2x 32->16", best(lambda: py.sumpool2x(y), repeat),
                 best(lambda: cy.sumpool2x(y), repeat)))
    return rows


def step_times(steps):
    out = {}
    for choice in ("python", "cython"):
        env = dict(os.environ, DUALATTN_KERNELS=choice)
        res = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(steps=steps)], env=env,
                             capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        out[backend] = float(secs)
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20, help="timing repeats per kernel (best of)")
    p.add_argument("--steps", type=int, default=3, help="training steps per backend (0 skips)")
    args = p.parse_args(argv)
    if kernels.compiled_backend is None:
        sys.exit("compiled extension not built; run: pip install -e . --no-build-isolation")

    print(f"{'kernel':34s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, t_py, t_cy in kernel_table(args.repeat):
        print(f"{name:34s} {1e3 * t_py:10.3f} {1e3 * t_cy:10.3f} {t_py / t_cy:7.2f}x")
    if args.steps:
        t = step_times(args.steps)
        print(f"\ntrain_step (default 32x32 config, mean of {args.steps}):")
        for name in ("python", "cython"):
            print(f"  {name:7s} {t[name]:.3f}s")
        print(f"  speedup {t['python'] / t['cython']:.2f}x")


if __name__ == "__main__":
    main()
