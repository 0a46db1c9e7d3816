"""Compare the compiled and NumPy row kernels, then a training epoch under each backend.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The epoch comparison runs in subprocesses so ``NIMIWAE_PURE_PYTHON`` takes
effect at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from nimiwae import kernels

EPOCH_SNIPPET = """
import json, time
import numpy as np
from nimiwae import kernels
from nimiwae.dataio import MaskedDataset, split, standardize
from nimiwae.simulate import SimSpec, simulate
from nimiwae.training import TrainConfig, train
ds = simulate(SimSpec(n=2000, p=8, mechanism="MNAR", seed=1))
data = standardize(split(MaskedDataset(np.where(ds.R == 1, ds.X, 0.0), ds.R), 1))
train(data, TrainConfig(epochs=1, seed=0))
t0 = time.perf_counter()
train(data, TrainConfig(epochs={epochs}, seed=0))
print(json.dumps({{"backend": kernels.BACKEND, "seconds": (time.perf_counter() - t0) / {epochs}}}))
"""


def kernel_cases(rng):
    rows, cols = 200 * 25, 8
    x, mu = rng.normal(size=(rows, cols)), rng.normal(size=(rows, cols))
    sigma = rng.uniform(0.5, 2.0, size=(rows, cols))
    w = (rng.random((rows, cols)) < 0.75).astype(float)
    g = rng.normal(size=rows)
    logits = rng.normal(scale=3, size=(rows, cols))
    r = (rng.random((rows, cols)) < 0.5).astype(float)
    a = rng.normal(size=(200, 25))
    out = np.log(np.exp(a).sum(axis=1))
    ga = rng.normal(size=200)
    return {
        "gauss_rows_fwd": lambda k: k.gauss_rows_fwd(x, mu, sigma, w),
        "gauss_rows_bwd": lambda k: k.gauss_rows_bwd(x, mu, sigma, w, g),
        "bern_logits_rows_fwd": lambda k: k.bern_logits_rows_fwd(logits, r, w),
        "bern_logits_rows_bwd": lambda k: k.bern_logits_rows_bwd(logits, r, w, g),
        "lse_rows_fwd": lambda k: k.lse_rows_fwd(a),
        "lse_rows_bwd": lambda k: k.lse_rows_bwd(a, out, ga),
        "softplus": lambda k: k.softplus(logits),
    }


def bench_kernels(repeat):
    if kernels.compiled_backend is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")
        return
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<24}{'python us':>12}{'compiled us':>14}{'speedup':>10}")
    for name, fn in cases.items():
        times = {}
        for label, mod in (("python", kernels.python_backend), ("compiled", kernels.compiled_backend)):
            t = timeit.Timer(lambda: fn(mod))
            n, _ = t.autorange()
            times[label] = min(t.repeat(repeat=repeat, number=n)) / n * 1e6
        print(f"{name:<24}{times['python']:>12.1f}{times['compiled']:>14.1f}{times['python'] / times['compiled']:>10.2f}")


def bench_epochs(epochs):
    print(f"\ntraining epoch, n=2000 p=8 MNAR, defaults ({epochs} epochs timed)")
    for pure in ("0", "1"):
        env = dict(os.environ, NIMIWAE_PURE_PYTHON=pure)
        out = subprocess.run(
            [sys.executable, "-c", EPOCH_SNIPPET.format(epochs=epochs)], env=env, capture_output=True, text=True, check=True
        )
        res = json.loads(out.stdout.strip().splitlines()[-1])
        print(f"  {res['backend']:<10}{res['seconds'] * 1e3:>10.1f} ms/epoch")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_epochs(args.epochs)
