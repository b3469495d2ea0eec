"""Time the compiled kernel core against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel runs on inputs sized like the default segmenter (T=112
snippets at hidden width 64) and like an evaluation pass (a few hundred
boundaries, a few thousand ranked detections).  Also times one full
segmenter training epoch on synthetic data under each backend.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from adstruct.kernels import _fallback, backend


def kernel_cases(rng):
    T, H = 112, 64
    x = rng.normal(size=(T, H))
    w = rng.normal(size=(3, H, H))
    g = rng.normal(size=(T, H))
    probs = rng.random(20_000)
    pred = np.sort(rng.uniform(0, 600, 400))
    gt = np.sort(rng.uniform(0, 600, 400))
    hits = rng.random(5_000) < 0.3
    return {
        "conv1d_forward T=112 H=64 d=4": lambda m: m.conv1d_forward(x, w, 4),
        "conv1d_backward T=112 H=64 d=4": lambda m: m.conv1d_backward(x, w, 4, g),
        "local_maxima T=20000 r=2": lambda m: m.local_maxima(probs, 0.5, 2),
        "greedy_match 400x400": lambda m: m.greedy_match(pred, gt, 0.5),
        "precision_sum n=5000": lambda m: m.precision_sum(hits),
    }


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    n, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=n)) / n


EPOCH_SNIPPET = """
import time
from adstruct.data_io import SyntheticConfig, generate_synthetic
from adstruct.segmentation import SegmenterConfig, train_segmenter
from adstruct.kernels import backend
data = generate_synthetic(SyntheticConfig(n_videos=50, seed=7))
t0 = time.perf_counter()
train_segmenter(data, SegmenterConfig(epochs=3))
print(backend.NAME, (time.perf_counter() - t0) / 3)
"""


def epoch_time(pure: bool):
    env = dict(os.environ)
    if pure:
        env["ADSTRUCT_PURE_PYTHON"] = "1"
    else:
        env.pop("ADSTRUCT_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return out[0], float(out[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results here")
    ap.add_argument("--skip-epoch", action="store_true", help="kernels only")
    args = ap.parse_args(argv)

    if backend.compiled is None:
        sys.exit("compiled core not built; run `pip install -e . --no-build-isolation` first")
    rows = []
    print(f"{'kernel':34} {'python':>11} {'compiled':>11} {'speedup':>8}")
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        tp = best_of(lambda: fn(_fallback), args.repeat)
        tc = best_of(lambda: fn(backend.compiled), args.repeat)
        rows.append({"kernel": name, "python_s": tp, "compiled_s": tc, "speedup": tp / tc})
        print(f"{name:34} {tp * 1e6:9.1f}us {tc * 1e6:9.1f}us {tp / tc:7.1f}x")
    if not args.skip_epoch:
        (_, tp), (name_c, tc) = epoch_time(True), epoch_time(False)
        assert name_c == "compiled"
        rows.append({"kernel": "segmenter epoch (50 videos)", "python_s": tp, "compiled_s": tc,
                     "speedup": tp / tc})
        print(f"{'segmenter epoch (50 videos)':34} {tp:10.3f}s {tc:10.3f}s {tp / tc:7.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
