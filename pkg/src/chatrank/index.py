"""Inverted index over pair messages with TF-IDF candidate fetch.

Weighting: document weight w(t,d) = (1 + ln tf(t,d)) * ln((1+N)/(1+df(t))),
documents cosine-normalized by the Euclidean norm of their weighted term
vector, queries weighted the same way but left unnormalized. Fetch scores
are sums of per-term products, so they are always >= 0.

The index persists to a versioned binary file (magic "CIRX"); the layout is
documented in docs/FILE_FORMATS.md and round-trips bit-exactly. The file
carries the pair texts as well, so a served index is self-contained.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .corpus import MRPair, Utterance

MAGIC = b"CIRX"
FORMAT_VERSION = 1

DEFAULT_FETCH_K = 100
SHORT_QUERY_MAX_TOKENS = 3


@dataclass(frozen=True)
class Posting:
    doc_id: int
    term_freq: int


@dataclass(frozen=True)
class Candidate:
    pair: MRPair
    fetch_score: float


class InvertedIndex:
    """Immutable TF-IDF index over the message side of MRPairs."""

    def __init__(self, pairs: list[MRPair], terms: list[str], offsets, doc_ids, tfs):
        self.pairs = pairs
        self.n_docs = len(pairs)
        self.terms = terms
        self.term_id = {t: i for i, t in enumerate(terms)}
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.post_doc_ids = np.asarray(doc_ids, dtype=np.int32)
        self.post_tfs = np.asarray(tfs, dtype=np.int32)
        self.df = (self.offsets[1:] - self.offsets[:-1]).astype(np.int64)
        idf = self._idf_array()
        weights = (1.0 + np.log(self.post_tfs)) * np.repeat(idf, self.df)
        norms = np.zeros(self.n_docs)
        np.add.at(norms, self.post_doc_ids, weights * weights)
        self.doc_norms = np.sqrt(norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            normalized = np.where(
                self.doc_norms[self.post_doc_ids] > 0.0,
                weights / self.doc_norms[self.post_doc_ids],
                0.0,
            )
        self.post_norm_weights = normalized

    def _idf_array(self) -> np.ndarray:
        return np.log((1.0 + self.n_docs) / (1.0 + self.df.astype(np.float64)))

    def idf(self, term: str) -> float:
        df = self.df[self.term_id[term]] if term in self.term_id else 0
        return math.log((1.0 + self.n_docs) / (1.0 + df))

    def postings(self, term: str) -> list[Posting]:
        t = self.term_id.get(term)
        if t is None:
            return []
        s, e = self.offsets[t], self.offsets[t + 1]
        return [
            Posting(int(d), int(f))
            for d, f in zip(self.post_doc_ids[s:e], self.post_tfs[s:e])
        ]

    # -- persistence -----------------------------------------------------

    def save(self, path) -> None:
        buf = bytearray()
        buf += MAGIC
        buf += struct.pack("<I", FORMAT_VERSION)
        buf += struct.pack("<QQ", self.n_docs, len(self.terms))
        for term in self.terms:
            tb = term.encode("utf-8")
            buf += struct.pack("<I", len(tb)) + tb
        for t in range(len(self.terms)):
            s, e = int(self.offsets[t]), int(self.offsets[t + 1])
            buf += struct.pack("<Q", e - s)
            for k in range(s, e):
                buf += struct.pack("<II", int(self.post_doc_ids[k]), int(self.post_tfs[k]))
        buf += self.doc_norms.astype("<f8").tobytes()
        for pair in self.pairs:
            for text in (pair.message.raw, pair.response.raw):
                tb = text.encode("utf-8")
                buf += struct.pack("<I", len(tb)) + tb
        Path(path).write_bytes(bytes(buf))

    @classmethod
    def load(cls, path) -> "InvertedIndex":
        data = Path(path).read_bytes()
        view = memoryview(data)
        if bytes(view[:4]) != MAGIC:
            raise ValueError(f"{path}: not an index file (bad magic)")
        (version,) = struct.unpack_from("<I", view, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported index format version {version}")
        off = 8
        n_docs, n_terms = struct.unpack_from("<QQ", view, off)
        off += 16
        terms = []
        for _ in range(n_terms):
            (ln,) = struct.unpack_from("<I", view, off)
            off += 4
            terms.append(bytes(view[off : off + ln]).decode("utf-8"))
            off += ln
        offsets = np.zeros(n_terms + 1, dtype=np.int64)
        doc_ids: list[int] = []
        tfs: list[int] = []
        for t in range(n_terms):
            (df,) = struct.unpack_from("<Q", view, off)
            off += 8
            for _ in range(df):
                d, f = struct.unpack_from("<II", view, off)
                off += 8
                doc_ids.append(d)
                tfs.append(f)
            offsets[t + 1] = offsets[t] + df
        norms = np.frombuffer(data, dtype="<f8", count=n_docs, offset=off).astype(np.float64)
        off += 8 * n_docs
        pairs = []
        for i in range(n_docs):
            texts = []
            for _ in range(2):
                (ln,) = struct.unpack_from("<I", view, off)
                off += 4
                texts.append(bytes(view[off : off + ln]).decode("utf-8"))
                off += ln
            pairs.append(
                MRPair(id=i, message=Utterance.make(texts[0]), response=Utterance.make(texts[1]))
            )
        idx = cls(pairs, terms, offsets, np.array(doc_ids, dtype=np.int32), np.array(tfs, dtype=np.int32))
        # stored norms are authoritative for bit-exact round trips
        idx.doc_norms = norms
        weights = (1.0 + np.log(idx.post_tfs)) * np.repeat(idx._idf_array(), idx.df)
        with np.errstate(invalid="ignore", divide="ignore"):
            idx.post_norm_weights = np.where(
                norms[idx.post_doc_ids] > 0.0, weights / norms[idx.post_doc_ids], 0.0
            )
        return idx


def build_index(pairs: list[MRPair]) -> InvertedIndex:
    """Index the message tokens of every pair; pair ids must be unique."""
    if not pairs:
        raise ValueError("cannot build an index over an empty corpus")
    seen_ids = {p.id for p in pairs}
    if len(seen_ids) != len(pairs):
        raise ValueError("pair ids must be unique within a corpus")
    term_docs: dict[str, list[tuple[int, int]]] = {}
    for pair in sorted(pairs, key=lambda p: p.id):
        for term, tf in sorted(Counter(pair.message.tokens).items()):
            term_docs.setdefault(term, []).append((pair.id, tf))
    terms = sorted(term_docs)
    offsets = np.zeros(len(terms) + 1, dtype=np.int64)
    doc_ids: list[int] = []
    tfs: list[int] = []
    for t, term in enumerate(terms):
        for d, f in term_docs[term]:
            doc_ids.append(d)
            tfs.append(f)
        offsets[t + 1] = len(doc_ids)
    return InvertedIndex(
        list(sorted(pairs, key=lambda p: p.id)),
        terms,
        offsets,
        np.array(doc_ids, dtype=np.int32),
        np.array(tfs, dtype=np.int32),
    )


def query_weights(index: InvertedIndex, query_tokens: list[str]) -> list[tuple[str, float]]:
    """Per-term query weights (1 + ln tf) * idf, terms sorted for determinism."""
    counts = Counter(query_tokens)
    return [(term, (1.0 + math.log(tf)) * index.idf(term)) for term, tf in sorted(counts.items())]


def fetch_candidates(
    message: Utterance,
    context: Utterance,
    k: int,
    index: InvertedIndex,
    short_query_max_tokens: int = SHORT_QUERY_MAX_TOKENS,
) -> list[Candidate]:
    """Top-k TF-IDF candidates for a message, context-expanded when short.

    Messages with <= short_query_max_tokens tokens get the context tokens
    prepended to the query. Only documents with score > 0 are returned, so
    fewer than k results (possibly none) can come back; ties break by
    ascending doc id.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    query = list(message.tokens)
    if len(query) <= short_query_max_tokens and context.tokens:
        query = list(context.tokens) + query
    if not query:
        return []
    weighted = [(t, w) for t, w in query_weights(index, query) if t in index.term_id]
    if not weighted:
        return []
    term_ids = np.array([index.term_id[t] for t, _ in weighted], dtype=np.int64)
    term_w = np.array([w for _, w in weighted], dtype=np.float64)
    scores = kernels.tfidf_accumulate(
        index.offsets, index.post_doc_ids, index.post_norm_weights, term_ids, term_w, index.n_docs
    )
    hits = np.nonzero(scores > 0.0)[0]
    if hits.shape[0] == 0:
        return []
    order = hits[np.lexsort((hits, -scores[hits]))][:k]
    return [Candidate(pair=index.pairs[int(d)], fetch_score=float(scores[d])) for d in order]


def score_document(index: InvertedIndex, query_tokens: list[str], doc_tokens: list[str]) -> float:
    """Fetch-style TF-IDF score of a query against an arbitrary document.

    Uses the index's collection statistics (N, df) for idf, with the same
    log-tf weighting and document cosine normalization as fetch_candidates.
    """
    if not query_tokens or not doc_tokens:
        return 0.0
    doc_counts = Counter(doc_tokens)
    doc_w = {t: (1.0 + math.log(tf)) * index.idf(t) for t, tf in doc_counts.items()}
    norm = math.sqrt(math.fsum(w * w for w in doc_w.values()))
    if norm <= 0.0:
        return 0.0
    total = 0.0
    for term, qw in query_weights(index, query_tokens):
        if term in doc_w:
            total += qw * doc_w[term] / norm
    return total
