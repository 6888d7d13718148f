"""Array kernels for token-sequence alignment.

The dynamic-programming tables behind word diffing, ROUGE-L and leakage
screening are the only hot loops in the package; everything else is I/O
bound. Each kernel has two interchangeable implementations:

* a numba ``@njit`` version (default when numba imports cleanly), and
* a vectorized numpy version that processes the table row by row.

Set ``CTRLGEN_KERNELS=numpy`` or ``CTRLGEN_KERNELS=numba`` to force a
backend; the default (``auto``) prefers numba. ``benchmarks/bench_kernels.py``
compares the two.
"""
from __future__ import annotations

import os

import numpy as np

_ENV_VAR = "CTRLGEN_KERNELS"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


def active_backend() -> str:
    """Resolve the kernel backend from the environment ("numba" or "numpy")."""
    choice = os.environ.get(_ENV_VAR, "auto").lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError(f"{_ENV_VAR}=numba but numba is not importable")
        return "numba"
    return "numba" if _HAVE_NUMBA else "numpy"


def encode_tokens(*sequences: list[str]) -> list[np.ndarray]:
    """Intern tokens across sequences into shared int32 id arrays."""
    ids: dict[str, int] = {}
    out = []
    for seq in sequences:
        arr = np.empty(len(seq), dtype=np.int32)
        for i, tok in enumerate(seq):
            arr[i] = ids.setdefault(tok, len(ids))
        out.append(arr)
    return out


# --- suffix LCS table ------------------------------------------------------
#
# table[i, j] = length of the longest common subsequence of a[i:] and b[j:].
# Filling from the suffixes (rather than prefixes) lets callers walk the
# alignment forward, which yields the earliest-match tie-breaking the diff
# layer wants.

if _HAVE_NUMBA:

    @njit(cache=True)
    def _suffix_lcs_table_numba(a, b):  # pragma: no cover - exercised via dispatch
        n, m = a.shape[0], b.shape[0]
        table = np.zeros((n + 1, m + 1), dtype=np.int32)
        for i in range(n - 1, -1, -1):
            for j in range(m - 1, -1, -1):
                if a[i] == b[j]:
                    table[i, j] = table[i + 1, j + 1] + 1
                else:
                    down = table[i + 1, j]
                    right = table[i, j + 1]
                    table[i, j] = down if down >= right else right
        return table


def _suffix_lcs_table_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = a.shape[0], b.shape[0]
    table = np.zeros((n + 1, m + 1), dtype=np.int32)
    # Row recurrence: row[j] = max(next_row[j], match + next_row[j+1], row[j+1]).
    # The dependence on row[j+1] is a suffix running-max, so each row reduces
    # to a reversed maximum.accumulate over the first two candidates.
    for i in range(n - 1, -1, -1):
        next_row = table[i + 1]
        base = next_row[:m].copy()
        matched = b == a[i]
        if matched.any():
            np.maximum(base, np.where(matched, next_row[1:] + 1, 0), out=base)
        table[i, :m] = np.maximum.accumulate(base[::-1])[::-1]
    return table


def suffix_lcs_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """DP table of suffix LCS lengths for two int token-id arrays."""
    if active_backend() == "numba":
        return _suffix_lcs_table_numba(a, b)
    return _suffix_lcs_table_numpy(a, b)


def lcs_length(a: np.ndarray, b: np.ndarray) -> int:
    """Length of the longest common subsequence of two token-id arrays."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return 0
    return int(suffix_lcs_table(a, b)[0, 0])


# --- longest common contiguous run -----------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _common_run_ends_numba(a, b):  # pragma: no cover - exercised via dispatch
        n, m = a.shape[0], b.shape[0]
        prev = np.zeros(m + 1, dtype=np.int32)
        cur = np.zeros(m + 1, dtype=np.int32)
        ends = np.zeros(n, dtype=np.int32)
        for i in range(n):
            for j in range(m):
                if a[i] == b[j]:
                    cur[j + 1] = prev[j] + 1
                else:
                    cur[j + 1] = 0
                if cur[j + 1] > ends[i]:
                    ends[i] = cur[j + 1]
            prev, cur = cur, prev
        return ends


def _common_run_ends_numpy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, m = a.shape[0], b.shape[0]
    prev = np.zeros(m + 1, dtype=np.int32)
    ends = np.zeros(n, dtype=np.int32)
    for i in range(n):
        cur = np.zeros(m + 1, dtype=np.int32)
        matched = b == a[i]
        cur[1:][matched] = prev[:m][matched] + 1
        ends[i] = cur.max() if m else 0
        prev = cur
    return ends


def common_run_ends(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each position i of `a`, the longest common run of `a` and `b` ending at i.

    ``ends[i]`` is the largest k such that ``a[i-k+1 : i+1]`` occurs
    contiguously somewhere in ``b``.
    """
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros(a.shape[0], dtype=np.int32)
    if active_backend() == "numba":
        return _common_run_ends_numba(a, b)
    return _common_run_ends_numpy(a, b)


def warmup() -> None:
    """Trigger JIT compilation so timing runs do not count compile time."""
    a, b = encode_tokens(["a", "b"], ["b", "a"])
    suffix_lcs_table(a, b)
    common_run_ends(a, b)
