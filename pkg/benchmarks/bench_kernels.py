"""Compare the compiled kernels against the numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time (``XRUMOUR_PURE=1`` forces the fallback).

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys

WORKLOAD = r"""
import json, sys, timeit
import numpy as np
from xrumour import kernels
from xrumour.model import TrainConfig, init_params, train_supervised
from xrumour.tokenizer import TokenSequence

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
symbols = rng.integers(0, 6, size=20_000).astype(np.int32)
ids = rng.integers(0, 3000, size=(64, 384))
lengths = rng.integers(1, 385, size=64)
table = rng.normal(size=(3000, 64))
grad = rng.normal(size=(64, 64))
acc = np.zeros_like(table)

def padded(n):
    ids = np.zeros(384, dtype=np.int64)
    ids[:n] = rng.integers(5, 3000, size=n)
    return TokenSequence(ids, n, ())


data = [(padded(int(n)), int(n) % 2) for n in rng.integers(20, 200, size=256)]
params = init_params(3000, 64, 2, seed=0)

cases = {
    "merge_pair (20k symbols)": lambda: kernels.merge_pair(symbols, 1, 2, 99),
    "pool_mean (64x384, d=64)": lambda: kernels.pool_mean(ids, lengths, table),
    "pool_scatter (64x384, d=64)": lambda: kernels.pool_scatter(ids, lengths, grad, acc),
    "train_supervised (256 seqs, 1 epoch)": lambda: train_supervised(params, data, TrainConfig(epochs=1)),
}
out = {"backend": kernels.BACKEND}
for name, fn in cases.items():
    number = 1 if name.startswith("train") else 20
    out[name] = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
print(json.dumps(out))
"""


def measure(pure: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("XRUMOUR_PURE", None)
    if pure:
        env["XRUMOUR_PURE"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKLOAD, str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    fast = measure(False, args.repeat)
    slow = measure(True, args.repeat)
    if fast["backend"] != "cython":
        print("compiled extension not built; both columns use the numpy fallback")
    print(f"{'case':40s} {'compiled ms':>12s} {'fallback ms':>12s} {'speedup':>8s}")
    for name in fast:
        if name == "backend":
            continue
        f, s = 1e3 * fast[name], 1e3 * slow[name]
        print(f"{name:40s} {f:12.3f} {s:12.3f} {s / f:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
