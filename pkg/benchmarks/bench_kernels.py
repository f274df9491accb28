#!/usr/bin/env python3
"""Throughput of the pairwise match-count kernels, JIT vs pure numpy.

Builds full n x n BLEU and chrF utility matrices over a synthetic corpus
and reports pair evaluations per second.  Run without flags to get a
comparison table: the script re-invokes itself with RMBR_NO_NUMBA=1 to
time the fallback path in a fresh interpreter.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --lists 32 --n 30 --repeats 2
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from rmbr.core import Candidate, NBestList
from rmbr.kernels import using_numba
from rmbr.mbr import build_utility_matrix


def synthetic_corpus(num_lists, n, rng):
    vocab = [f"tok{i}" for i in range(200)]
    lists = []
    for _ in range(num_lists):
        base = [vocab[int(i)] for i in rng.integers(0, len(vocab), size=20)]
        cands = []
        for i in range(n):
            toks = list(base)
            for _ in range(int(rng.integers(1, 6))):
                toks[int(rng.integers(len(toks)))] = vocab[int(rng.integers(len(vocab)))]
            cands.append(
                Candidate(text=" ".join(toks), tokens=tuple(toks), log_prob=-float(i))
            )
        lists.append(NBestList(source="bench", candidates=tuple(cands)))
    return lists


def measure(lists, utility, repeats):
    # first build pays JIT compilation; time steady-state only
    build_utility_matrix(lists[0], utility, lists[0].n)
    pairs = sum(lst.n * lst.n for lst in lists) * repeats
    started = time.perf_counter()
    for _ in range(repeats):
        for lst in lists:
            build_utility_matrix(lst, utility, lst.n)
    elapsed = time.perf_counter() - started
    return {"pairs": pairs, "seconds": elapsed, "pairs_per_sec": pairs / elapsed}


def run_measurements(args):
    rng = np.random.default_rng(args.seed)
    lists = synthetic_corpus(args.lists, args.n, rng)
    return {
        "backend": "numba" if using_numba() else "numpy",
        "lists": args.lists,
        "n": args.n,
        "repeats": args.repeats,
        "bleu": measure(lists, "bleu", args.repeats),
        "chrf": measure(lists, "chrf", args.repeats),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--lists", type=int, default=64)
    parser.add_argument("--n", type=int, default=50)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument(
        "--json", action="store_true", help="print raw measurements (inner mode)"
    )
    args = parser.parse_args()

    if args.json:
        json.dump(run_measurements(args), sys.stdout)
        print()
        return

    runs = {}
    for backend, flag in (("numba", ""), ("numpy", "1")):
        env = dict(os.environ, RMBR_NO_NUMBA=flag)
        argv = [
            sys.executable, os.path.abspath(__file__), "--json",
            "--lists", str(args.lists), "--n", str(args.n),
            "--repeats", str(args.repeats), "--seed", str(args.seed),
        ]
        out = subprocess.run(argv, env=env, capture_output=True, text=True, check=True)
        runs[backend] = json.loads(out.stdout)
        if runs[backend]["backend"] != backend:
            raise RuntimeError(f"expected {backend} backend, got {runs[backend]['backend']}")

    print(f"{args.lists} lists, n={args.n}, {args.repeats} repeats")
    print(f"{'utility':<8} {'numba pairs/s':>14} {'numpy pairs/s':>14} {'speedup':>8}")
    for utility in ("bleu", "chrf"):
        jit = runs["numba"][utility]["pairs_per_sec"]
        plain = runs["numpy"][utility]["pairs_per_sec"]
        print(f"{utility:<8} {jit:>14.0f} {plain:>14.0f} {jit / plain:>7.1f}x")


if __name__ == "__main__":
    main()
