"""Gradient-boosted regression-tree ranker (pairwise rank gradients with
NDCG swap deltas), NDCG metrics, and candidate-set ranking.

Trees route left when feature <= threshold. Split search is exact over the
11 features; leaf values are one Newton step over the accumulated pairwise
gradients. Training is deterministic for a fixed seed, so saving an
ensemble twice from the same inputs produces byte-identical files.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .cdssm import CdssmModel, EmbeddingCache
from .corpus import ConversationTriple, Utterance
from .features import N_FEATURES, extract_features
from .index import Candidate

logger = logging.getLogger(__name__)

ENSEMBLE_HEADER = "chatrank-mart"
ENSEMBLE_VERSION = 1


@dataclass(frozen=True)
class TrainingSample:
    qid: int
    features: np.ndarray
    label: int


@dataclass
class MartConfig:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 1
    base_score: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 0 or self.max_depth < 0:
            raise ValueError("n_trees and max_depth must be >= 0")
        if self.learning_rate <= 0 or self.min_samples_leaf < 1:
            raise ValueError("invalid tree settings")


class RegressionTree:
    """Flat node arrays; feature[i] < 0 marks a leaf holding value[i]."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)
        self._validate()

    def _validate(self) -> None:
        n = self.feature.shape[0]
        for arr in (self.threshold, self.left, self.right, self.value):
            if arr.shape[0] != n:
                raise ValueError("inconsistent node arrays")
        for i in range(n):
            if self.feature[i] >= 0:
                if self.feature[i] >= N_FEATURES:
                    raise ValueError(f"node {i}: feature index out of range")
                for child in (self.left[i], self.right[i]):
                    if not (0 <= child < n):
                        raise ValueError(f"node {i}: child {child} out of range")
            if not math.isfinite(self.value[i]):
                raise ValueError(f"node {i}: non-finite value")

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return kernels.tree_apply(self.feature, self.threshold, self.left, self.right, self.value, X)


@dataclass
class MartEnsemble:
    trees: list[RegressionTree] = field(default_factory=list)
    learning_rate: float = 0.1
    base_score: float = 0.0
    max_depth: int = 3
    seed: int = 0
    training_ndcg1: list[float] = field(default_factory=list, repr=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    # -- persistence: versioned text, one tree per block ------------------

    def save(self, path) -> None:
        # repr(float) is the shortest exact round-trip form, so reloaded
        # ensembles score bit-identically
        lines = [f"{ENSEMBLE_HEADER} {ENSEMBLE_VERSION}"]
        lines.append(f"learning_rate {float(self.learning_rate)!r}")
        lines.append(f"base_score {float(self.base_score)!r}")
        lines.append(f"max_depth {self.max_depth}")
        lines.append(f"seed {self.seed}")
        lines.append(f"trees {len(self.trees)}")
        for t, tree in enumerate(self.trees):
            lines.append(f"tree {t} nodes {tree.n_nodes}")
            for i in range(tree.n_nodes):
                if tree.feature[i] >= 0:
                    lines.append(
                        f"{i} split {int(tree.feature[i])} {float(tree.threshold[i])!r} "
                        f"{int(tree.left[i])} {int(tree.right[i])}"
                    )
                else:
                    lines.append(f"{i} leaf {float(tree.value[i])!r}")
        lines.append("end")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MartEnsemble":
        text = Path(path).read_text(encoding="utf-8").splitlines()
        pos = 0

        def take() -> str:
            nonlocal pos
            if pos >= len(text):
                raise ValueError(f"{path}: truncated ensemble file")
            line = text[pos]
            pos += 1
            return line

        head = take().split()
        if head[:1] != [ENSEMBLE_HEADER] or int(head[1]) != ENSEMBLE_VERSION:
            raise ValueError(f"{path}: not a supported ensemble file")
        fields = {}
        for key in ("learning_rate", "base_score", "max_depth", "seed", "trees"):
            name, val = take().split(maxsplit=1)
            if name != key:
                raise ValueError(f"{path}: expected {key!r}, found {name!r}")
            fields[key] = val
        ens = cls(
            learning_rate=float(fields["learning_rate"]),
            base_score=float(fields["base_score"]),
            max_depth=int(fields["max_depth"]),
            seed=int(fields["seed"]),
        )
        for t in range(int(fields["trees"])):
            tag, t_idx, nodes_kw, n_nodes = take().split()
            if tag != "tree" or int(t_idx) != t or nodes_kw != "nodes":
                raise ValueError(f"{path}: malformed tree header for tree {t}")
            n = int(n_nodes)
            feature = np.full(n, -1, dtype=np.int32)
            threshold = np.zeros(n)
            left = np.full(n, -1, dtype=np.int32)
            right = np.full(n, -1, dtype=np.int32)
            value = np.zeros(n)
            for _ in range(n):
                parts = take().split()
                i = int(parts[0])
                if parts[1] == "split":
                    feature[i] = int(parts[2])
                    threshold[i] = float(parts[3])
                    left[i] = int(parts[4])
                    right[i] = int(parts[5])
                elif parts[1] == "leaf":
                    value[i] = float(parts[2])
                else:
                    raise ValueError(f"{path}: unknown node kind {parts[1]!r}")
            ens.trees.append(RegressionTree(feature, threshold, left, right, value))
        if take() != "end":
            raise ValueError(f"{path}: missing end marker")
        return ens


def score_ensemble(ens: MartEnsemble, features: np.ndarray) -> float:
    """base_score + learning_rate * sum of tree outputs for one feature vector."""
    return float(ens.predict(np.asarray(features, dtype=np.float64).reshape(1, -1))[0])


def ndcg_at_k(ranked_labels: Sequence[int], k: int) -> float:
    """NDCG@k of binary labels listed in predicted order; 0.0 if no positives."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ideal = sorted(ranked_labels, reverse=True)
    if not ideal or ideal[0] == 0:
        return 0.0

    def dcg(labels) -> float:
        return math.fsum(
            (2.0 ** labels[i] - 1.0) / math.log2(i + 2) for i in range(min(k, len(labels)))
        )

    return dcg(list(ranked_labels)) / dcg(ideal)


# ---------------------------------------------------------------------------
# Training-set construction
# ---------------------------------------------------------------------------


def build_training_set(
    model: CdssmModel,
    triples: Sequence[ConversationTriple],
    response_pool: Sequence[Utterance] | None = None,
    negatives_per_positive: int = 2,
    seed: int = 0,
    cache: EmbeddingCache | None = None,
    feature_mask: np.ndarray | None = None,
) -> list[TrainingSample]:
    """One positive plus sampled negatives per triple, features included.

    Negatives are drawn uniformly without replacement from the distinct
    response texts of the pool (defaulting to the triples' own responses),
    always excluding the positive, so each qid group holds pairwise distinct
    responses. Deterministic for a fixed seed.
    """
    if negatives_per_positive < 1:
        raise ValueError("negatives_per_positive must be >= 1")
    pool = list(response_pool) if response_pool is not None else [t.response for t in triples]
    unique: dict[str, Utterance] = {}
    for utt in pool:
        unique.setdefault(utt.raw, utt)
    pool_texts = sorted(unique)
    rng = np.random.default_rng(seed)
    cache = cache or EmbeddingCache(model)
    samples: list[TrainingSample] = []
    for qid, triple in enumerate(triples):
        options = [t for t in pool_texts if t != triple.response.raw]
        if len(options) < negatives_per_positive:
            raise ValueError(
                f"response pool too small: {len(options)} distinct candidates, "
                f"need {negatives_per_positive}"
            )
        fv = extract_features(model, triple.context, triple.message, triple.response, cache)
        samples.append(TrainingSample(qid=qid, features=_masked(fv, feature_mask), label=1))
        for j in rng.choice(len(options), size=negatives_per_positive, replace=False):
            neg = unique[options[int(j)]]
            fv = extract_features(model, triple.context, triple.message, neg, cache)
            samples.append(TrainingSample(qid=qid, features=_masked(fv, feature_mask), label=0))
    return samples


def _masked(fv: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return fv if mask is None else fv * mask


# ---------------------------------------------------------------------------
# Boosting
# ---------------------------------------------------------------------------


def _fit_tree(X: np.ndarray, lambdas: np.ndarray, weights: np.ndarray, config: MartConfig) -> RegressionTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    def leaf_value(idx: np.ndarray) -> float:
        w = weights[idx].sum()
        return float(lambdas[idx].sum() / w) if w > 0.0 else 0.0

    def grow(idx: np.ndarray, depth: int) -> int:
        node = new_node()
        if depth >= config.max_depth or idx.shape[0] < 2 * config.min_samples_leaf:
            value[node] = leaf_value(idx)
            return node
        feat, thr, ok = kernels.best_split(X, idx, lambdas, config.min_samples_leaf)
        if not ok:
            value[node] = leaf_value(idx)
            return node
        go_left = X[idx, feat] <= thr
        feature[node] = int(feat)
        threshold[node] = float(thr)
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.arange(X.shape[0], dtype=np.int64), 0)
    return RegressionTree(feature, threshold, left, right, value)


def train_mart(samples: Sequence[TrainingSample], config: MartConfig | None = None) -> MartEnsemble:
    """Boost regression trees on pairwise rank gradients.

    Groups with a single label value are skipped with a warning; training
    fails if every group is degenerate. The returned ensemble carries the
    per-iteration training NDCG@1 trace in ``training_ndcg1``.
    """
    config = config or MartConfig()
    config.validate()
    if not samples:
        raise ValueError("no training samples")

    order = sorted(range(len(samples)), key=lambda i: (samples[i].qid, i))
    kept_rows: list[int] = []
    group_ptr = [0]
    skipped = 0
    i = 0
    while i < len(order):
        j = i
        qid = samples[order[i]].qid
        while j < len(order) and samples[order[j]].qid == qid:
            j += 1
        labels = {samples[order[r]].label for r in range(i, j)}
        if len(labels) < 2:
            skipped += 1
        else:
            kept_rows.extend(order[i:j])
            group_ptr.append(len(kept_rows))
        i = j
    if skipped:
        logger.warning("skipped %d degenerate group(s) with a single label value", skipped)
    if len(group_ptr) < 2:
        raise ValueError("all groups are degenerate (single label value)")
    n_groups = len(group_ptr) - 1
    if n_groups < 2:
        raise ValueError("need at least 2 usable qid groups")

    X = np.ascontiguousarray([samples[r].features for r in kept_rows], dtype=np.float64)
    y = np.array([samples[r].label for r in kept_rows], dtype=np.int64)
    ptr = np.array(group_ptr, dtype=np.int64)

    ens = MartEnsemble(
        learning_rate=config.learning_rate,
        base_score=config.base_score,
        max_depth=config.max_depth,
        seed=config.seed,
    )
    scores = np.zeros(X.shape[0])
    for _ in range(config.n_trees):
        lambdas, weights = kernels.lambda_gradients(scores, y, ptr)
        tree = _fit_tree(X, lambdas, weights, config)
        ens.trees.append(tree)
        scores += config.learning_rate * tree.predict(X)
        ens.training_ndcg1.append(float(kernels.ndcg1_mean(scores, y, ptr)))
    return ens


# ---------------------------------------------------------------------------
# Candidate ranking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: Candidate
    features: np.ndarray
    score: float


def rank_candidates(
    ens: MartEnsemble,
    model: CdssmModel,
    context: Utterance,
    message: Utterance,
    candidates: Sequence[Candidate],
    cache: EmbeddingCache | None = None,
) -> list[ScoredCandidate]:
    """Sort candidates by ensemble score, descending.

    Ties break by higher fetch_score, then ascending doc id; the first item
    is the response to emit.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    cache = cache or EmbeddingCache(model)
    scored = []
    for cand in candidates:
        fv = extract_features(model, context, message, cand.pair.response, cache)
        scored.append(ScoredCandidate(cand, fv, score_ensemble(ens, fv)))
    scored.sort(key=lambda sc: (-sc.score, -sc.candidate.fetch_score, sc.candidate.pair.id))
    return scored
