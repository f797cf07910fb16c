"""The 11-dimensional reranking feature vector for a (context, message, response) triple.

Layout (fixed order):
  f0       relevance of R to M in semantic space
  f1..f4   n-gram match counts between M and R, n = 1..4
  f5..f8   n-gram match counts between C and R, n = 1..4
  f9       similarity of C and R in response space
  f10      relevance of M to C (low values hint at a topic change)

With an empty context, f5..f8 are 0 and f9 = f10 = 0.0.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cdssm import CdssmModel, EmbeddingCache, cosine, sem_rel, sem_sim
from .corpus import Utterance

N_FEATURES = 11
FEATURE_NAMES = tuple(f"f{i}" for i in range(N_FEATURES))

CMM_MAX_N = 4


def ngram_multiset(tokens: Sequence[str], n: int) -> Counter:
    if len(tokens) < n:
        return Counter()
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def cmm_counts(a: Sequence[str], b: Sequence[str]) -> tuple[int, int, int, int]:
    """Multiset n-gram intersection sizes for n = 1..4.

    count_n = sum over distinct n-grams of min(occurrences in a, occurrences
    in b); 0 whenever either side is shorter than n. Symmetric in a and b.
    """
    out = []
    for n in range(1, CMM_MAX_N + 1):
        ca = ngram_multiset(a, n)
        cb = ngram_multiset(b, n)
        if len(cb) < len(ca):
            ca, cb = cb, ca
        out.append(sum(min(cnt, cb[g]) for g, cnt in ca.items()))
    return tuple(out)


def extract_features(
    model: CdssmModel,
    context: Utterance,
    message: Utterance,
    response: Utterance,
    cache: EmbeddingCache | None = None,
) -> np.ndarray:
    """FeatureVector as a float64 array of length 11; C may be empty."""
    if not message.tokens or not response.tokens:
        raise ValueError("message and response must be non-empty")
    fv = np.zeros(N_FEATURES)
    if cache is not None:
        fv[0] = cosine(cache.embed_m(message), cache.embed_r(response))
    else:
        fv[0] = sem_rel(model, message, response)
    fv[1:5] = cmm_counts(message.tokens, response.tokens)
    if context.tokens:
        fv[5:9] = cmm_counts(context.tokens, response.tokens)
        if cache is not None:
            fv[9] = cosine(cache.embed_r(context), cache.embed_r(response))
            fv[10] = cosine(cache.embed_m(context), cache.embed_r(message))
        else:
            fv[9] = sem_sim(model, context, response)
            fv[10] = sem_rel(model, context, message)
    return fv


def write_feature_tsv(path, rows: Iterable[tuple[int, int, np.ndarray]]) -> int:
    """Dump (qid, label, features) rows as TSV with a qid/label/f0..f10 header."""
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("qid\tlabel\t" + "\t".join(FEATURE_NAMES) + "\n")
        for qid, label, fv in rows:
            fh.write(f"{qid}\t{label}\t" + "\t".join(repr(float(v)) for v in fv) + "\n")
            n += 1
    return n


def read_feature_tsv(path) -> list[tuple[int, int, np.ndarray]]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        expected = ["qid", "label", *FEATURE_NAMES]
        if header != expected:
            raise ValueError(f"{path}: unexpected feature TSV header {header!r}")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 + N_FEATURES:
                raise ValueError(f"{path}: bad feature row {line!r}")
            rows.append((int(parts[0]), int(parts[1]), np.array([float(v) for v in parts[2:]])))
    return rows
