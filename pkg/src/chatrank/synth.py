"""Synthetic conversation corpora for demos, tuning, and the test suite.

Two generators:

  - make_separable_pairs: a tiny corpus with strict topic correspondence
    between message and response vocabulary, for semantic-model sanity
    checks.
  - make_desk_corpus: a desk-scale chat corpus (pairs + 3-turn triples)
    with topical vocabulary, filler words, lexical echo responses, and a
    slice of short context-dependent messages, so retrieval, lexical, and
    semantic signals all carry different amounts of information.

All text is lowercase alphabetic, so tokenization is the identity on
whitespace-separated words.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ConversationTriple, MRPair, Utterance

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

FILLERS = ("so", "eh", "ok", "na", "um", "ah", "de", "ho")
SHORT_MESSAGES = (
    "why",
    "oh really",
    "and then",
    "you think so",
    "how so",
    "go on",
    "is that right",
    "says who",
    "sure about that",
    "tell me more",
)

M_SUFFIXES = ("la", "ne", "ti")
R_SUFFIXES = ("mo", "ku", "sa")


def _topic_roots(n_topics: int) -> list[str]:
    roots = []
    i = 0
    for c1 in _CONSONANTS:
        for v1 in _VOWELS:
            for c2 in _CONSONANTS:
                for v2 in _VOWELS:
                    if c1 == c2:
                        continue
                    roots.append(c1 + v1 + c2 + v2)
                    i += 1
                    if i >= n_topics:
                        return roots
    raise ValueError(f"cannot generate {n_topics} distinct topic roots")


@dataclass(frozen=True)
class TopicWords:
    message_words: tuple[str, ...]
    response_words: tuple[str, ...]


def _topics(n_topics: int) -> list[TopicWords]:
    return [
        TopicWords(
            message_words=tuple(root + s for s in M_SUFFIXES),
            response_words=tuple(root + s for s in R_SUFFIXES),
        )
        for root in _topic_roots(n_topics)
    ]


def _pick(rng: np.random.Generator, words, k: int) -> list[str]:
    return [words[int(i)] for i in rng.choice(len(words), size=min(k, len(words)), replace=False)]


def _message_tokens(rng: np.random.Generator, topic: TopicWords) -> list[str]:
    tokens = _pick(rng, topic.message_words, int(rng.integers(2, 4)))
    tokens += _pick(rng, FILLERS, int(rng.integers(1, 3)))
    rng.shuffle(tokens)
    return tokens


def _response_tokens(
    rng: np.random.Generator, topic: TopicWords, echo_of: list[str] | None
) -> list[str]:
    tokens = _pick(rng, topic.response_words, int(rng.integers(2, 4)))
    tokens += _pick(rng, FILLERS, 1)
    rng.shuffle(tokens)
    if echo_of:
        # copy a contiguous slice of the source message, preferring a start
        # position that covers at least one non-filler word
        width = int(rng.integers(1, min(2, len(echo_of)) + 1))
        starts = [
            s
            for s in range(len(echo_of) - width + 1)
            if any(tok not in FILLERS for tok in echo_of[s : s + width])
        ] or list(range(len(echo_of) - width + 1))
        s = starts[int(rng.integers(0, len(starts)))]
        at = int(rng.integers(0, len(tokens) + 1))
        tokens = tokens[:at] + echo_of[s : s + width] + tokens[at:]
    return tokens


def make_separable_pairs(n_pairs: int = 200, n_topics: int = 20, seed: int = 0) -> list[MRPair]:
    """Pairs whose message and response words correspond topic-for-topic."""
    rng = np.random.default_rng(seed)
    topics = _topics(n_topics)
    pairs = []
    for i in range(n_pairs):
        topic = topics[int(rng.integers(0, n_topics))]
        m = " ".join(_pick(rng, topic.message_words, int(rng.integers(1, 4))))
        r = " ".join(_pick(rng, topic.response_words, int(rng.integers(1, 4))))
        pairs.append(MRPair(id=i, message=Utterance.make(m), response=Utterance.make(r)))
    return pairs


@dataclass
class DeskCorpusConfig:
    n_pairs: int = 3000
    n_triples: int = 1400
    n_topics: int = 40
    echo_rate: float = 0.5
    short_message_rate: float = 0.25
    short_pair_rate: float = 0.15
    seed: int = 11


def make_desk_corpus(cfg: DeskCorpusConfig | None = None) -> tuple[list[dict], list[dict]]:
    """Desk-scale corpus as raw JSONL-ready dicts: (pair rows, triple rows)."""
    cfg = cfg or DeskCorpusConfig()
    rng = np.random.default_rng(cfg.seed)
    topics = _topics(cfg.n_topics)

    pair_rows = []
    for _ in range(cfg.n_pairs):
        topic = topics[int(rng.integers(0, cfg.n_topics))]
        if rng.random() < cfg.short_pair_rate:
            m_tokens = _pick(rng, topic.message_words, int(rng.integers(1, 3)))
        else:
            m_tokens = _message_tokens(rng, topic)
        echo = m_tokens if rng.random() < cfg.echo_rate else None
        r_tokens = _response_tokens(rng, topic, echo)
        pair_rows.append({"m": " ".join(m_tokens), "r": " ".join(r_tokens)})

    triple_rows = []
    for _ in range(cfg.n_triples):
        topic = topics[int(rng.integers(0, cfg.n_topics))]
        c_tokens = _message_tokens(rng, topic)
        if rng.random() < cfg.short_message_rate:
            m_tokens = SHORT_MESSAGES[int(rng.integers(0, len(SHORT_MESSAGES)))].split()
        else:
            m_tokens = _message_tokens(rng, topic)
        echo = m_tokens if rng.random() < cfg.echo_rate else None
        r_tokens = _response_tokens(rng, topic, echo)
        triple_rows.append(
            {"c": " ".join(c_tokens), "m": " ".join(m_tokens), "r": " ".join(r_tokens)}
        )
    return pair_rows, triple_rows


def pairs_from_rows(rows: list[dict]) -> list[MRPair]:
    return [
        MRPair(id=i, message=Utterance.make(row["m"]), response=Utterance.make(row["r"]))
        for i, row in enumerate(rows)
    ]


def triples_from_rows(rows: list[dict]) -> list[ConversationTriple]:
    return [
        ConversationTriple(
            context=Utterance.make(row["c"]),
            message=Utterance.make(row["m"]),
            response=Utterance.make(row["r"]),
        )
        for row in rows
    ]
