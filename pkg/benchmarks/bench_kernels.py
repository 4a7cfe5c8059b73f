"""Time the numba and numpy kernel backends against each other.

    python benchmarks/bench_kernels.py [--repeat 200] [--json out.json]

Per-kernel timings use the ``backend=`` argument on identical inputs at two
sizes: one video-sized call and one long sequence. The end-to-end line
scores a synthetic fold with ground-truth predictions in a fresh process
per backend, selected through ``ASSIGN_HOI_NUMBA``, so that it includes the
import-time selection and numba's cached compilation.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from assign_hoi import kernels


def _segments(rng, T, mean_len):
    cuts = np.sort(rng.choice(np.arange(1, T), size=max(1, T // mean_len) - 1, replace=False))
    bounds = np.concatenate([[0], cuts, [T]])
    labels = rng.integers(0, 10, size=len(bounds) - 1)
    return bounds[:-1], bounds[1:], labels


def _cases(T, rng):
    labels = np.repeat(rng.integers(0, 10, size=T // 8 + 1), 8)[:T]
    pulse = np.zeros(T, dtype=np.int64)
    pulse[rng.choice(T, size=max(1, T // 16), replace=False)] = 1
    pulse[-1] = 1
    u = (rng.random((8, T)) < 0.1)
    u[:, -1] = True
    pred, gt = _segments(rng, T, 14), _segments(rng, T, 16)
    ref = np.flatnonzero(pulse)
    other = rng.choice(T, size=len(ref), replace=False)
    conf_p, conf_g = rng.integers(0, 12, T), rng.integers(0, 12, T)
    return {
        "run_lengths": lambda b: kernels.run_lengths(labels, backend=b),
        "boundary_target": lambda b: kernels.boundary_target(pulse, 4.0, backend=b),
        "greedy_match": lambda b: kernels.greedy_match(pred, gt, 0.5, backend=b),
        "closing_frames": lambda b: kernels.closing_frames(u, backend=b),
        "proximity_count": lambda b: kernels.proximity_count(ref, other, 5, backend=b),
        "confusion": lambda b: kernels.confusion(conf_p, conf_g, 12, backend=b),
    }


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for T in (128, 20_000):
        for name, fn in _cases(T, rng).items():
            row = {"kernel": name, "T": T}
            for backend in kernels.available_backends():
                fn(backend)  # warm-up, includes any compilation
                n = max(1, repeat if T < 1000 else repeat // 10)
                row[backend] = min(timeit.repeat(lambda: fn(backend), number=n, repeat=3)) / n
            rows.append(row)
    return rows


_E2E = """
import time
from assign_hoi.metrics import evaluate_dataset
from assign_hoi.synthetic import SyntheticConfig, generate_synthetic
ds = generate_synthetic(SyntheticConfig(num_videos=40, num_objects_range=(2, 2)))
preds = {v.id: dict(v.ground_truth) for v in ds}
evaluate_dataset(preds, list(ds))
t = time.perf_counter()
for _ in range(5):
    evaluate_dataset(preds, list(ds))
print((time.perf_counter() - t) / 5)
"""


def end_to_end():
    out = {}
    for backend, flag in (("numba", "1"), ("numpy", "0")):
        if backend not in kernels.available_backends():
            continue
        env = dict(os.environ, ASSIGN_HOI_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", _E2E], env=env, capture_output=True, text=True, check=True)
        out[backend] = float(res.stdout.strip().splitlines()[-1])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    rows = kernel_table(args.repeat)
    print(f"{'kernel':<16} {'T':>6} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    for r in rows:
        nb, npy = r.get("numba"), r["numpy"]
        speed = f"{npy / nb:8.2f}" if nb else "     n/a"
        nb_txt = f"{nb * 1e6:10.1f}" if nb else "       n/a"
        print(f"{r['kernel']:<16} {r['T']:>6} {nb_txt} {npy * 1e6:10.1f} {speed}")
    e2e = end_to_end()
    print("fold scoring (40 videos, ground-truth predictions), seconds per call:",
          ", ".join(f"{k} {v:.4f}" for k, v in e2e.items()))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "fold_scoring": e2e}, fh, indent=2)


if __name__ == "__main__":
    main()
