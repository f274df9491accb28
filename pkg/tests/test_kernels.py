"""Kernel correctness: encoding, both count paths, and matrix/metric agreement."""

import os
import subprocess
import sys

import numpy as np
import pytest

from rmbr.kernels import (
    encode_ngram_blocks,
    pair_match_counts,
    pair_match_counts_jit,
    pair_match_counts_numpy,
    using_numba,
)
from rmbr.mbr import BleuUtility, ChrfUtility
from rmbr.metrics import MetricConfig, clipped_matches, sentence_bleu, sentence_chrf

from conftest import random_list


def random_seqs(rng, count, vocab_size=6, max_len=12):
    vocab = [f"w{i}" for i in range(vocab_size)]
    return [
        [vocab[int(i)] for i in rng.integers(0, vocab_size, size=int(rng.integers(1, max_len)))]
        for _ in range(count)
    ]


def test_encode_blocks_structure():
    seqs = [["a", "b", "a"], ["b"]]
    ids, counts, offsets, lengths = encode_ngram_blocks(seqs, 2)
    assert lengths.tolist() == [3, 1]
    assert offsets[0] == 0 and offsets[-1] == len(ids) == len(counts)
    # ids strictly increase inside each block
    for b in range(len(offsets) - 1):
        block = ids[offsets[b] : offsets[b + 1]]
        assert all(x < y for x, y in zip(block, block[1:]))
    # item 0: unigrams {a: 2, b: 1}, bigrams {ab: 1, ba: 1}; item 1: {b: 1}, {}
    assert sorted(counts[offsets[0] : offsets[1]].tolist()) == [1, 2]
    assert counts[offsets[1] : offsets[2]].tolist() == [1, 1]
    assert offsets[3] - offsets[2] == 1  # item 1 unigrams
    assert offsets[4] - offsets[3] == 0  # item 1 has no bigrams


def test_encode_blocks_interning_is_shared_across_items():
    # "b" must get the same unigram id in both items
    ids, counts, offsets, _ = encode_ngram_blocks([["b"], ["b"]], 1)
    assert ids[offsets[0]] == ids[offsets[1]]


def test_match_counts_agree_with_counter_oracle():
    rng = np.random.default_rng(3)
    for trial in range(10):
        seqs = random_seqs(rng, int(rng.integers(2, 9)))
        order = int(rng.integers(1, 5))
        n = len(seqs)
        l = int(rng.integers(1, n + 1))
        ids, counts, offsets, _ = encode_ngram_blocks(seqs, order)
        got = pair_match_counts(ids, counts, offsets, order, n, l)
        for i in range(n):
            for j in range(l):
                assert got[i, j].tolist() == clipped_matches(seqs[i], seqs[j], order)


def test_numpy_path_agrees_with_counter_oracle():
    rng = np.random.default_rng(4)
    seqs = random_seqs(rng, 6)
    ids, counts, offsets, _ = encode_ngram_blocks(seqs, 4)
    got = pair_match_counts_numpy(ids, counts, offsets, 4, 6, 6)
    for i in range(6):
        for j in range(6):
            assert got[i, j].tolist() == clipped_matches(seqs[i], seqs[j], 4)


@pytest.mark.skipif(not using_numba(), reason="JIT path disabled")
def test_jit_and_numpy_paths_identical():
    rng = np.random.default_rng(5)
    for _ in range(5):
        seqs = random_seqs(rng, int(rng.integers(2, 10)))
        order = int(rng.integers(1, 5))
        n = len(seqs)
        ids, counts, offsets, _ = encode_ngram_blocks(seqs, order)
        jit = pair_match_counts_jit(ids, counts, offsets, order, n, n)
        ref = pair_match_counts_numpy(ids, counts, offsets, order, n, n)
        assert np.array_equal(jit, ref)


def test_char_sequences_encode_like_token_sequences():
    ids, counts, offsets, lengths = encode_ngram_blocks(["abab", "ba"], 2)
    got = pair_match_counts(ids, counts, offsets, 2, 2, 2)
    assert got[0, 1].tolist() == clipped_matches("abab", "ba", 2)
    assert lengths.tolist() == [4, 2]


def test_bleu_matrix_equals_double_loop_exactly():
    rng = np.random.default_rng(6)
    for _ in range(5):
        lst = random_list(rng, int(rng.integers(2, 8)))
        for cfg in (MetricConfig(), MetricConfig(bleu_smoothing="none")):
            matrix = BleuUtility(cfg).matrix(lst, lst.n)
            for i, hyp in enumerate(lst.candidates):
                for j, ref in enumerate(lst.candidates):
                    assert matrix[i, j] == sentence_bleu(hyp.tokens, ref.tokens, cfg)


def test_chrf_matrix_equals_double_loop_exactly():
    rng = np.random.default_rng(7)
    for _ in range(5):
        lst = random_list(rng, int(rng.integers(2, 8)))
        matrix = ChrfUtility().matrix(lst, lst.n)
        for i, hyp in enumerate(lst.candidates):
            for j, ref in enumerate(lst.candidates):
                assert matrix[i, j] == sentence_chrf(hyp.text, ref.text)


def test_diagonal_is_identity_score():
    rng = np.random.default_rng(8)
    lst = random_list(rng, 6)
    assert np.all(np.diag(BleuUtility().matrix(lst, lst.n)) == 1.0)
    assert np.all(np.diag(ChrfUtility().matrix(lst, lst.n)) == 1.0)


_FALLBACK_PROBE = """
import json, sys
import numpy as np
from rmbr.kernels import using_numba
from rmbr.mbr import BleuUtility, ChrfUtility
from rmbr.core import Candidate, NBestList

lists = json.load(sys.stdin)
out = {"using_numba": using_numba(), "matrices": []}
for texts in lists:
    cands = tuple(
        Candidate(text=t, tokens=tuple(t.split()), log_prob=-float(i))
        for i, t in enumerate(texts)
    )
    lst = NBestList(source="s", candidates=cands)
    out["matrices"].append(
        [
            BleuUtility().matrix(lst, lst.n).tobytes().hex(),
            ChrfUtility().matrix(lst, lst.n).tobytes().hex(),
        ]
    )
print(json.dumps(out))
"""


def test_env_flag_selects_fallback_with_identical_scores():
    import json

    rng = np.random.default_rng(9)
    payload = [
        [" ".join(c.tokens) for c in random_list(rng, 5).candidates] for _ in range(3)
    ]

    def run(env_flag):
        env = dict(os.environ)
        env.pop("RMBR_NO_NUMBA", None)
        if env_flag:
            env["RMBR_NO_NUMBA"] = "1"
        proc = subprocess.run(
            [sys.executable, "-c", _FALLBACK_PROBE],
            input=json.dumps(payload),
            capture_output=True,
            text=True,
            env=env,
            check=True,
        )
        return json.loads(proc.stdout)

    fallback = run(True)
    assert fallback["using_numba"] is False
    jit = run(False)
    # scores must be bit-identical regardless of which path computed the counts
    assert fallback["matrices"] == jit["matrices"]
