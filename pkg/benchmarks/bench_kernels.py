"""Numba vs pure-numpy kernels, plus one end-to-end discovery under each backend.

    python benchmarks/bench_kernels.py [--repeat 5] [--skip-e2e]

The end-to-end part runs discovery in a subprocess with and without
CAUSIL_DISABLE_NUMBA so the backend switch is exercised exactly as a user
would set it.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from causil import kernels as K


def _best(fn, repeat):
    fn()  # compile / warm caches
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)


def _subset_rss_case(rng, calls=20_000):
    X = rng.normal(size=(2000, 12))
    G = X.T @ X
    subsets = [np.sort(rng.choice(11, size=rng.integers(0, 6), replace=False)).astype(np.int64)
               for _ in range(64)]

    def run(f):
        def go():
            for i in range(calls):
                f(G, subsets[i & 63], 11, 1e-8)
        return go
    return f"subset_rss x{calls}", run(K.subset_rss_numba), run(K.subset_rss_numpy)


def _meek_case(rng, graphs=300, n=12):
    cases = []
    for _ in range(graphs):
        A = np.triu(rng.random((n, n)) < 0.25, 1)
        A = A | A.T
        # a few directed seeds so the rules have something to propagate
        D = np.triu(rng.random((n, n)) < 0.1, 1) & A
        A[D.T] = False
        cases.append((A, np.zeros((n, n), dtype=np.bool_)))

    def run(f):
        def go():
            for A, F in cases:
                f(A, F)
        return go
    return f"meek {graphs} graphs n={n}", run(K.meek_numba), run(K.meek_numpy)


def _segment_case(rng, T=20_000):
    counts = rng.integers(1, 40, size=T)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    values = rng.normal(size=int(offsets[-1]))

    def run(f):
        def go():
            for op in (K.MEAN, K.MAX, K.MIN, K.SUM):
                f(values, offsets, op)
        return go
    return f"segment_reduce T={T}", run(K.segment_reduce_numba), run(K.segment_reduce_numpy)


E2E = """
import time
from causil.datagen import SimConfig, generate_synthetic
from causil.pipeline import DiscoveryConfig, discover
from causil.kernels import backend, warmup
warmup()
panel, gt = generate_synthetic(SimConfig(n_services=10, T=1000, seed=0))
t = time.perf_counter()
discover(panel, gt.call_graph, DiscoveryConfig())
print(backend(), time.perf_counter() - t)
"""


def _e2e():
    rows = []
    for flag in ("0", "1"):
        env = dict(os.environ, CAUSIL_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", E2E], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        rows.append((out[0], float(out[1])))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-e2e", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    print(f"{'kernel':<28}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for name, nb, npy in (_subset_rss_case(rng), _meek_case(rng), _segment_case(rng)):
        a, b = _best(nb, args.repeat), _best(npy, args.repeat)
        print(f"{name:<28}{a:>10.4f}{b:>10.4f}{b / a:>8.1f}x")

    if not args.skip_e2e:
        print("\nend-to-end discovery, 10 services, T=1000")
        for name, secs in _e2e():
            print(f"  {name:<8}{secs:8.2f} s")


if __name__ == "__main__":
    main()
