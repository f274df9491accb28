"""Pairwise n-gram match-counting kernels for utility-matrix construction.

Building an n x l utility matrix needs clipped n-gram match counts for every
(hypothesis, pseudo-reference) pair and every order.  Candidates are encoded
once into per-order blocks of sorted (n-gram id, count) pairs — n-grams are
interned into integer ids per order — and the kernel runs a merge
intersection over each pair of blocks.

The kernels return integer match counts only.  Turning counts into BLEU or
chrF scores happens in the shared scalar routines in :mod:`rmbr.metrics`,
so the JIT path, the numpy fallback, and the plain per-sentence metrics all
produce bit-identical scores.

Set ``RMBR_NO_NUMBA=1`` to force the pure-numpy fallback; it is also used
automatically when numba is not importable.
"""

from __future__ import annotations

import os
from collections import Counter
from typing import Sequence

import numpy as np

_USE_NUMBA = os.environ.get("RMBR_NO_NUMBA", "").lower() not in ("1", "true", "yes")
if _USE_NUMBA:
    try:
        from numba import njit, prange
    except ImportError:  # pragma: no cover - depends on environment
        _USE_NUMBA = False


def using_numba() -> bool:
    """Whether the JIT-compiled kernel path is active."""
    return _USE_NUMBA


def encode_ngram_blocks(
    seqs: Sequence[Sequence], max_order: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Encode sequences into flat per-order blocks of (n-gram id, count).

    N-grams are interned into dense integer ids, with a separate id space
    per order.  Returns ``(ids, counts, offsets, lengths)`` where the block
    for item i at order k+1 occupies
    ``ids[offsets[i * max_order + k] : offsets[i * max_order + k + 1]]``
    (ids strictly increasing within a block, counts aligned) and
    ``lengths[i]`` is the item's sequence length.
    """
    if max_order < 1:
        raise ValueError(f"max_order must be >= 1, got {max_order}")
    tables = [{} for _ in range(max_order)]
    id_parts = []
    count_parts = []
    offsets = np.zeros(len(seqs) * max_order + 1, dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    pos = 0
    block = 0
    for i, seq in enumerate(seqs):
        lengths[i] = len(seq)
        for k in range(max_order):
            table = tables[k]
            grams = Counter(
                tuple(seq[j : j + k + 1]) for j in range(len(seq) - k)
            )
            ids = np.empty(len(grams), dtype=np.int64)
            counts = np.empty(len(grams), dtype=np.int64)
            for t, (gram, count) in enumerate(grams.items()):
                gid = table.get(gram)
                if gid is None:
                    gid = len(table)
                    table[gram] = gid
                ids[t] = gid
                counts[t] = count
            order = np.argsort(ids)
            id_parts.append(ids[order])
            count_parts.append(counts[order])
            pos += len(grams)
            block += 1
            offsets[block] = pos
    if id_parts:
        flat_ids = np.concatenate(id_parts)
        flat_counts = np.concatenate(count_parts)
    else:
        flat_ids = np.zeros(0, dtype=np.int64)
        flat_counts = np.zeros(0, dtype=np.int64)
    return flat_ids, flat_counts, offsets, lengths


def pair_match_counts_numpy(
    ids: np.ndarray,
    counts: np.ndarray,
    offsets: np.ndarray,
    max_order: int,
    n: int,
    l: int,
) -> np.ndarray:
    """Pure-numpy pairwise clipped match counts, shape (n, l, max_order).

    Entry [i, j, k] is the clipped order-(k+1) match count of candidate i
    scored against candidate j.
    """
    out = np.zeros((n, l, max_order), dtype=np.int64)
    for i in range(n):
        for j in range(l):
            for k in range(max_order):
                a0, a1 = offsets[i * max_order + k], offsets[i * max_order + k + 1]
                b0, b1 = offsets[j * max_order + k], offsets[j * max_order + k + 1]
                common, ia, ib = np.intersect1d(
                    ids[a0:a1], ids[b0:b1], assume_unique=True, return_indices=True
                )
                if common.size:
                    out[i, j, k] = np.minimum(
                        counts[a0:a1][ia], counts[b0:b1][ib]
                    ).sum()
    return out


if _USE_NUMBA:

    @njit(cache=True, nogil=True, parallel=True)
    def _match_counts_jit(ids, counts, offsets, max_order, n, l):  # pragma: no cover
        out = np.zeros((n, l, max_order), dtype=np.int64)
        for i in prange(n):
            for j in range(l):
                for k in range(max_order):
                    a = offsets[i * max_order + k]
                    a_end = offsets[i * max_order + k + 1]
                    b = offsets[j * max_order + k]
                    b_end = offsets[j * max_order + k + 1]
                    m = 0
                    while a < a_end and b < b_end:
                        ga = ids[a]
                        gb = ids[b]
                        if ga == gb:
                            ca = counts[a]
                            cb = counts[b]
                            m += ca if ca < cb else cb
                            a += 1
                            b += 1
                        elif ga < gb:
                            a += 1
                        else:
                            b += 1
                    out[i, j, k] = m
        return out

    def pair_match_counts_jit(ids, counts, offsets, max_order, n, l):
        return _match_counts_jit(
            ids, counts, offsets, np.int64(max_order), np.int64(n), np.int64(l)
        )

else:
    pair_match_counts_jit = None


def pair_match_counts(
    ids: np.ndarray,
    counts: np.ndarray,
    offsets: np.ndarray,
    max_order: int,
    n: int,
    l: int,
) -> np.ndarray:
    """Pairwise clipped match counts via the active path (JIT or numpy)."""
    if _USE_NUMBA:
        return pair_match_counts_jit(ids, counts, offsets, max_order, n, l)
    return pair_match_counts_numpy(ids, counts, offsets, max_order, n, l)
