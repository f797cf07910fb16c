"""Corpus ingestion: tokenization, safety filtering, and JSONL loading.

File formats:
  - pairs file: JSONL, one object per line with string fields "m" and "r"
  - triples file: JSONL with string fields "c", "m", "r"
  - blocklist file: one lowercase term per line, "#" starts a comment line
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator


class CorpusFormatError(ValueError):
    """A corpus file line failed to parse; carries the 1-based line number."""

    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}, line {line_no}: {reason}")


def _is_punct(ch: str) -> bool:
    # punctuation run = Unicode punctuation or symbol characters
    return unicodedata.category(ch)[0] in ("P", "S")


def tokenize(raw: str) -> list[str]:
    """Lowercase, split on Unicode whitespace, isolate punctuation runs.

    Within a whitespace-delimited chunk, every maximal run of
    punctuation/symbol characters becomes its own token, e.g.
    "Hello, World!" -> ["hello", ",", "world", "!"]. Empty input gives [].
    """
    tokens: list[str] = []
    for chunk in raw.lower().split():
        start = 0
        cur = _is_punct(chunk[0])
        for i in range(1, len(chunk)):
            nxt = _is_punct(chunk[i])
            if nxt != cur:
                tokens.append(chunk[start:i])
                start = i
                cur = nxt
        tokens.append(chunk[start:])
    return tokens


@dataclass(frozen=True)
class Utterance:
    """A piece of text plus its tokens (a pure function of the text)."""

    raw: str
    tokens: tuple[str, ...]

    @classmethod
    def make(cls, raw: str) -> "Utterance":
        return cls(raw, tuple(tokenize(raw)))


EMPTY_UTTERANCE = Utterance("", ())


@dataclass(frozen=True)
class MRPair:
    """An indexed message-response document; the retrieval unit."""

    id: int
    message: Utterance
    response: Utterance


@dataclass(frozen=True)
class ConversationTriple:
    """A 3-turn record: context (turn 1), message (turn 2), response (turn 3)."""

    context: Utterance
    message: Utterance
    response: Utterance


@dataclass(frozen=True)
class FilterConfig:
    blocklist: frozenset[str] = frozenset()
    reject_urls: bool = True
    reject_mentions: bool = True
    reject_hashtags: bool = True

    def __post_init__(self):
        for term in self.blocklist:
            if not term or term != term.lower():
                raise ValueError(f"blocklist terms must be lowercase and non-empty: {term!r}")


def _token_reject_reason(tokens: Iterable[str], cfg: FilterConfig) -> str | None:
    for tok in tokens:
        if cfg.reject_urls and (tok.startswith("http") or "://" in tok):
            return "url"
        if cfg.reject_mentions and tok.startswith("@"):
            return "mention"
        if cfg.reject_hashtags and tok.startswith("#"):
            return "hashtag"
        if tok in cfg.blocklist:
            return "blocklist"
    return None


def filter_pair(pair: MRPair, cfg: FilterConfig) -> tuple[bool, str | None]:
    """Keep/reject decision for a tokenized pair; both sides are inspected.

    Returns (keep, reason) where reason is None for kept pairs and one of
    "url" / "mention" / "hashtag" / "blocklist" otherwise.
    """
    reason = _token_reject_reason(pair.message.tokens, cfg)
    if reason is None:
        reason = _token_reject_reason(pair.response.tokens, cfg)
    return (reason is None), reason


def filter_triple(triple: ConversationTriple, cfg: FilterConfig) -> tuple[bool, str | None]:
    """Keep/reject decision for a 3-turn record; all turns are inspected."""
    for utt in (triple.context, triple.message, triple.response):
        reason = _token_reject_reason(utt.tokens, cfg)
        if reason is not None:
            return False, reason
    return True, None


def _read_jsonl(path, fields: tuple[str, ...]) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(path, line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError(path, line_no, "expected a JSON object")
            for f in fields:
                if f not in obj:
                    raise CorpusFormatError(path, line_no, f"missing field {f!r}")
                if not isinstance(obj[f], str):
                    raise CorpusFormatError(path, line_no, f"field {f!r} must be a string")
            yield line_no, obj


def load_pairs(path, cfg: FilterConfig | None = None) -> tuple[list[MRPair], int]:
    """Load, tokenize and filter a pairs file.

    Kept pairs get sequential ids starting at 0, in file order. Returns
    (pairs, reject_count); records with an empty side after tokenization
    are rejected. Malformed lines abort with a CorpusFormatError naming
    the line.
    """
    cfg = cfg or FilterConfig()
    kept: list[MRPair] = []
    rejected = 0
    for _, obj in _read_jsonl(path, ("m", "r")):
        message = Utterance.make(obj["m"])
        response = Utterance.make(obj["r"])
        if not message.tokens or not response.tokens:
            rejected += 1
            continue
        if _token_reject_reason(message.tokens, cfg) or _token_reject_reason(
            response.tokens, cfg
        ):
            rejected += 1
            continue
        kept.append(MRPair(id=len(kept), message=message, response=response))
    return kept, rejected


def load_triples(path, cfg: FilterConfig | None = None) -> tuple[list[ConversationTriple], int]:
    """Load, tokenize and filter a triples file; same contract as load_pairs."""
    cfg = cfg or FilterConfig()
    kept: list[ConversationTriple] = []
    rejected = 0
    for _, obj in _read_jsonl(path, ("c", "m", "r")):
        triple = ConversationTriple(
            context=Utterance.make(obj["c"]),
            message=Utterance.make(obj["m"]),
            response=Utterance.make(obj["r"]),
        )
        if not (triple.context.tokens and triple.message.tokens and triple.response.tokens):
            rejected += 1
            continue
        keep, _ = filter_triple(triple, cfg)
        if not keep:
            rejected += 1
            continue
        kept.append(triple)
    return kept, rejected


def load_blocklist(path) -> frozenset[str]:
    """Read a blocklist file: one term per line, '#' lines are comments."""
    terms = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            terms.add(line.lower())
    return frozenset(terms)


def write_pairs_jsonl(path, records: Iterable[dict]) -> int:
    """Write {"m","r"} (or {"c","m","r"}) dicts as JSONL; returns line count."""
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n
