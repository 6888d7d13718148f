#!/usr/bin/env python3
"""Side-by-side benchmark: numba JIT kernels vs the numpy fallback.

The alignment kernels dominate batch restoration and ROUGE-L scoring, so
this is the timing that matters when choosing a backend. Validates that both
backends agree before timing them. JIT compile time is excluded via warmup.

Run:  python3 benchmarks/bench_kernels.py
"""
from __future__ import annotations

import random
import time

import numpy as np

from ctrlgen._kernels import (
    _common_run_ends_numpy,
    _suffix_lcs_table_numpy,
    common_run_ends,
    encode_tokens,
    suffix_lcs_table,
    warmup,
)

try:
    from ctrlgen._kernels import _common_run_ends_numba, _suffix_lcs_table_numba
except ImportError:
    raise SystemExit("numba backend unavailable; nothing to compare")


def random_tokens(rng: random.Random, n: int, vocab: int = 400) -> list[str]:
    return [f"w{rng.randrange(vocab)}" for _ in range(n)]


def mutated(rng: random.Random, tokens: list[str], rate: float = 0.05) -> list[str]:
    out = list(tokens)
    for i in range(len(out)):
        if rng.random() < rate:
            out[i] = f"m{rng.randrange(1000)}"
    return out


def bench(fn, *args, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    print("warming up JIT...")
    t0 = time.perf_counter()
    warmup()
    print(f"compile: {time.perf_counter() - t0:.1f}s\n")

    rng = random.Random(7)
    print(f"{'tokens':>7}  {'kernel':<16} {'numpy (ms)':>11} {'numba (ms)':>11} {'speedup':>8}")
    print("-" * 60)
    for n in (200, 600, 1500, 3000):
        a_tok = random_tokens(rng, n)
        b_tok = mutated(rng, a_tok)
        a, b = encode_tokens(a_tok, b_tok)

        t_np = bench(_suffix_lcs_table_numpy, a, b)
        t_nb = bench(_suffix_lcs_table_numba, a, b)
        assert np.array_equal(
            _suffix_lcs_table_numpy(a, b), _suffix_lcs_table_numba(a, b)
        ), "backend disagreement in suffix_lcs_table"
        print(f"{n:>7}  {'suffix_lcs_table':<16} {t_np*1e3:>11.2f} {t_nb*1e3:>11.2f} {t_np/t_nb:>7.1f}x")

        t_np = bench(_common_run_ends_numpy, a, b)
        t_nb = bench(_common_run_ends_numba, a, b)
        assert np.array_equal(
            _common_run_ends_numpy(a, b), _common_run_ends_numba(a, b)
        ), "backend disagreement in common_run_ends"
        print(f"{n:>7}  {'common_run_ends':<16} {t_np*1e3:>11.2f} {t_nb*1e3:>11.2f} {t_np/t_nb:>7.1f}x")

    # Confirm the env-flag dispatch touches both kernels without error.
    suffix_lcs_table(a, b)
    common_run_ends(a, b)
    print("\nbackend dispatch ok")


if __name__ == "__main__":
    main()
