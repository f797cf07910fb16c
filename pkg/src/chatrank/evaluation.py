"""Held-out next-utterance ranking harness plus judgment-vote aggregation.

For every held-out 3-turn conversation the true third turn is mixed with
responses sampled from other conversations, and each configured system
ranks the set:

  - ir_status        lexical TF-IDF match of the message against each
                     candidate response (retrieval-only baseline; idf
                     statistics come from the main index)
  - ir_status_cmm    boosted-tree ranker over the 8 n-gram match counts
  - semrel_cmm       ranker over f0..f8 (adds semantic relevance of M-R)
  - semrel_cmm_ccf   ranker over all 11 features (adds context capture)

R@1 is the fraction of conversations whose true response ranks first. The
true response always holds candidate id 0, so a distractor with identical
tokens can tie but never beat it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cdssm import CdssmModel, EmbeddingCache
from .corpus import ConversationTriple, FilterConfig, Utterance, load_triples
from .features import N_FEATURES, extract_features
from .index import InvertedIndex, score_document
from .ranker import MartConfig, MartEnsemble, build_training_set, ndcg_at_k, score_ensemble, train_mart

SYSTEMS = ("ir_status", "ir_status_cmm", "semrel_cmm", "semrel_cmm_ccf")
LEARNED_SYSTEMS = ("ir_status_cmm", "semrel_cmm", "semrel_cmm_ccf")


def _mask(active: Sequence[int]) -> np.ndarray:
    m = np.zeros(N_FEATURES)
    m[list(active)] = 1.0
    return m


FEATURE_MASKS: dict[str, np.ndarray] = {
    "ir_status_cmm": _mask(range(1, 9)),
    "semrel_cmm": _mask(range(0, 9)),
    "semrel_cmm_ccf": _mask(range(0, N_FEATURES)),
}


@dataclass
class EvalConfig:
    heldout: str | Path | None = None
    distractors_per_query: int = 9
    systems: tuple[str, ...] = SYSTEMS
    seed: int = 0

    def validate(self) -> None:
        if self.distractors_per_query < 1:
            raise ValueError("distractors_per_query must be >= 1")
        if not self.systems:
            raise ValueError("at least one system must be selected")
        for s in self.systems:
            if s not in SYSTEMS:
                raise ValueError(f"unknown system {s!r}; valid: {SYSTEMS}")


@dataclass
class SystemMetrics:
    r_at_1: float
    ndcg_at_1: float
    ndcg_at_2: float
    ndcg_at_3: float
    n_queries: int


def build_candidate_sets(
    triples: Sequence[ConversationTriple], n_distractors: int, seed: int
) -> list[list[Utterance]]:
    """Per triple: [true response, distractors...] with candidate ids = positions.

    Distractors are responses of other triples, sampled uniformly without
    replacement; deterministic for a fixed seed.
    """
    n = len(triples)
    if n - 1 < n_distractors:
        raise ValueError(f"need more than {n_distractors} triples to sample distractors")
    rng = np.random.default_rng(seed)
    sets = []
    for i, triple in enumerate(triples):
        draw = rng.choice(n - 1, size=n_distractors, replace=False)
        others = np.where(draw >= i, draw + 1, draw)
        sets.append([triple.response] + [triples[int(j)].response for j in others])
    return sets


def _ranked_labels(scores: Sequence[float]) -> list[int]:
    """Labels in ranked order; candidate 0 is the positive, ties keep lower ids first."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [1 if i == 0 else 0 for i in order]


def run_eval(
    cfg: EvalConfig,
    index: InvertedIndex,
    model: CdssmModel,
    ensembles: Mapping[str, MartEnsemble],
    triples: Sequence[ConversationTriple] | None = None,
) -> dict[str, SystemMetrics]:
    """Rank candidate sets with every configured system; returns per-system metrics."""
    cfg.validate()
    if triples is None:
        if cfg.heldout is None:
            raise ValueError("no held-out triples: set cfg.heldout or pass triples")
        triples, _ = load_triples(cfg.heldout, FilterConfig())
    triples = list(triples)
    if not triples:
        raise ValueError("held-out set is empty")
    for system in cfg.systems:
        if system != "ir_status" and system not in ensembles:
            raise ValueError(f"system {system!r} requires a trained ensemble")

    sets = build_candidate_sets(triples, cfg.distractors_per_query, cfg.seed)
    cache = EmbeddingCache(model)
    r1_hits = {s: 0 for s in cfg.systems}
    ndcg_parts: dict[str, dict[int, list[float]]] = {
        s: {1: [], 2: [], 3: []} for s in cfg.systems
    }
    for triple, cands in zip(triples, sets):
        fvs = None
        if any(s != "ir_status" for s in cfg.systems):
            fvs = [
                extract_features(model, triple.context, triple.message, cand, cache)
                for cand in cands
            ]
        for system in cfg.systems:
            if system == "ir_status":
                scores = [
                    score_document(index, list(triple.message.tokens), list(cand.tokens))
                    for cand in cands
                ]
            else:
                ens = ensembles[system]
                mask = FEATURE_MASKS[system]
                scores = [score_ensemble(ens, fv * mask) for fv in fvs]
            labels = _ranked_labels(scores)
            r1_hits[system] += labels[0]
            for k in (1, 2, 3):
                ndcg_parts[system][k].append(ndcg_at_k(labels, k))
    n = len(triples)
    return {
        s: SystemMetrics(
            r_at_1=r1_hits[s] / n,
            ndcg_at_1=math.fsum(ndcg_parts[s][1]) / n,
            ndcg_at_2=math.fsum(ndcg_parts[s][2]) / n,
            ndcg_at_3=math.fsum(ndcg_parts[s][3]) / n,
            n_queries=n,
        )
        for s in cfg.systems
    }


def train_system_ensembles(
    model: CdssmModel,
    triples: Sequence[ConversationTriple],
    systems: Sequence[str] = LEARNED_SYSTEMS,
    mart_config: MartConfig | None = None,
    negatives_per_positive: int = 2,
    seed: int = 0,
) -> dict[str, MartEnsemble]:
    """Train one ensemble per learned system, each on its masked feature set."""
    cache = EmbeddingCache(model)
    out = {}
    for system in systems:
        if system not in FEATURE_MASKS:
            raise ValueError(f"system {system!r} does not use a trained ensemble")
        samples = build_training_set(
            model,
            triples,
            negatives_per_positive=negatives_per_positive,
            seed=seed,
            cache=cache,
            feature_mask=FEATURE_MASKS[system],
        )
        out[system] = train_mart(samples, mart_config or MartConfig())
    return out


# ---------------------------------------------------------------------------
# Judgment aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JudgmentRecord:
    response_id: int
    votes: tuple[int, ...]

    def __post_init__(self):
        if len(self.votes) != 5:
            raise ValueError(f"record {self.response_id}: expected exactly 5 votes")
        if any(v not in (0, 1) for v in self.votes):
            raise ValueError(f"record {self.response_id}: votes must be 0 or 1")

    @property
    def score(self) -> int:
        return sum(self.votes)


SUPERMAJORITY = 4


def aggregate_judgments(records: Sequence[JudgmentRecord]) -> tuple[float, float]:
    """(mean score on the 0-5 scale, Precision@1 percentage).

    A record counts toward Precision@1 when its vote sum reaches the
    supermajority of 4 out of 5.
    """
    if not records:
        raise ValueError("no judgment records")
    scores = [rec.score for rec in records]
    mean = math.fsum(scores) / len(scores)
    p1 = 100.0 * sum(1 for s in scores if s >= SUPERMAJORITY) / len(scores)
    return mean, p1


def load_judgments(path) -> list[JudgmentRecord]:
    """JSONL with {"id": int, "votes": [five 0/1 values]} per line."""
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}, line {line_no}: invalid JSON ({exc.msg})") from exc
            records.append(JudgmentRecord(response_id=int(obj["id"]), votes=tuple(obj["votes"])))
    return records


def write_report(
    path,
    metrics: Mapping[str, SystemMetrics],
    judgments_summary: tuple[float, float, int] | None = None,
) -> None:
    """TSV report: one row per system, plus an optional judged-score block."""
    lines = ["system\tr_at_1\tndcg_at_1\tndcg_at_2\tndcg_at_3\tn_queries"]
    for system, m in metrics.items():
        lines.append(
            f"{system}\t{m.r_at_1:.6f}\t{m.ndcg_at_1:.6f}\t{m.ndcg_at_2:.6f}"
            f"\t{m.ndcg_at_3:.6f}\t{m.n_queries}"
        )
    if judgments_summary is not None:
        mean, p1, n = judgments_summary
        lines.append(f"judged_mean_score\t{mean:.6f}")
        lines.append(f"judged_precision_at_1\t{p1:.6f}")
        lines.append(f"judged_n\t{n}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
