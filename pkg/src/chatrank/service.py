"""Stateful chat runtime: sessions, the end-to-end respond pipeline, HTTP API.

Pipeline per user message: tokenize, take the immediately preceding turn as
context (empty for a fresh session), fetch TF-IDF candidates, extract
features, rank with the boosted ensemble, reply with the top candidate.
When retrieval comes back empty the service answers with a configurable
fallback utterance and flags it in the trace.

HTTP surface (UTF-8 JSON):
  POST /api/chat   {"session_id": str, "message": str, "debug": bool}
                   -> {"response": str, "trace": {...}?} or {"error": str}
  GET  /api/health -> {"status": "ok"}
Static files (the web client) are served under / when a directory is given.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from pydantic import BaseModel

from .cdssm import CdssmModel, EmbeddingCache
from .corpus import EMPTY_UTTERANCE, Utterance
from .index import DEFAULT_FETCH_K, SHORT_QUERY_MAX_TOKENS, InvertedIndex, fetch_candidates
from .ranker import MartEnsemble, rank_candidates

DEFAULT_FALLBACK = "i'm not sure what to say to that."
DEFAULT_TRACE_TOP = 10
DEFAULT_SESSION_TTL = 3600.0


@dataclass
class Session:
    session_id: str
    history: list[tuple[str, Utterance]] = field(default_factory=list)
    created: float = 0.0
    last_active: float = 0.0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


@dataclass(frozen=True)
class TraceCandidate:
    doc_id: int
    response: str
    fetch_score: float
    score: float
    features: tuple[float, ...]


@dataclass(frozen=True)
class RespondTrace:
    chosen: str
    candidate_count: int
    fallback: bool
    top: tuple[TraceCandidate, ...]

    def to_dict(self) -> dict:
        return {
            "chosen": self.chosen,
            "candidate_count": self.candidate_count,
            "fallback": self.fallback,
            "top": [
                {
                    "doc_id": c.doc_id,
                    "response": c.response,
                    "fetch_score": c.fetch_score,
                    "score": c.score,
                    "features": list(c.features),
                }
                for c in self.top
            ],
        }


class ChatService:
    """Shares immutable models across sessions; history mutates per session."""

    def __init__(
        self,
        index: InvertedIndex,
        model: CdssmModel,
        ensemble: MartEnsemble,
        *,
        fetch_k: int = DEFAULT_FETCH_K,
        trace_top: int = DEFAULT_TRACE_TOP,
        fallback_text: str = DEFAULT_FALLBACK,
        short_query_max_tokens: int = SHORT_QUERY_MAX_TOKENS,
        clock=time.time,
    ):
        self.index = index
        self.model = model
        self.ensemble = ensemble
        self.fetch_k = fetch_k
        self.trace_top = trace_top
        self.fallback_text = fallback_text
        self.short_query_max_tokens = short_query_max_tokens
        self.clock = clock
        self.cache = EmbeddingCache(model)
        self._sessions: dict[str, Session] = {}
        self._store_lock = threading.Lock()

    def _session(self, session_id: str) -> Session:
        with self._store_lock:
            sess = self._sessions.get(session_id)
            if sess is None:
                now = self.clock()
                sess = Session(session_id=session_id, created=now, last_active=now)
                self._sessions[session_id] = sess
            return sess

    def session_count(self) -> int:
        with self._store_lock:
            return len(self._sessions)

    def session_gc(self, ttl: float = DEFAULT_SESSION_TTL, now: float | None = None) -> int:
        """Evict sessions idle longer than ttl; returns the eviction count."""
        if ttl <= 0:
            raise ValueError("ttl must be > 0")
        now = self.clock() if now is None else now
        with self._store_lock:
            stale = [sid for sid, s in self._sessions.items() if now - s.last_active > ttl]
            for sid in stale:
                del self._sessions[sid]
            return len(stale)

    def respond(self, session_id: str, message: str) -> tuple[str, RespondTrace]:
        """Answer one user message within a session; appends both turns to history."""
        utt = Utterance.make(message)
        if not utt.tokens:
            raise ValueError("empty message")
        sess = self._session(session_id)
        with sess.lock:
            context = sess.history[-1][1] if sess.history else EMPTY_UTTERANCE
            cands = fetch_candidates(
                utt, context, self.fetch_k, self.index, self.short_query_max_tokens
            )
            if not cands:
                text = self.fallback_text
                trace = RespondTrace(chosen=text, candidate_count=0, fallback=True, top=())
            else:
                ranked = rank_candidates(
                    self.ensemble, self.model, context, utt, cands, self.cache
                )
                text = ranked[0].candidate.pair.response.raw
                trace = RespondTrace(
                    chosen=text,
                    candidate_count=len(ranked),
                    fallback=False,
                    top=tuple(
                        TraceCandidate(
                            doc_id=sc.candidate.pair.id,
                            response=sc.candidate.pair.response.raw,
                            fetch_score=sc.candidate.fetch_score,
                            score=sc.score,
                            features=tuple(float(v) for v in sc.features),
                        )
                        for sc in ranked[: self.trace_top]
                    ),
                )
            sess.history.append(("user", utt))
            sess.history.append(("bot", Utterance.make(text)))
            sess.last_active = self.clock()
            return text, trace


def load_service(index_path, cdssm_path, ranker_path, **kwargs) -> ChatService:
    return ChatService(
        index=InvertedIndex.load(index_path),
        model=CdssmModel.load(cdssm_path),
        ensemble=MartEnsemble.load(ranker_path),
        **kwargs,
    )


def new_session_id() -> str:
    return uuid.uuid4().hex


class ChatRequest(BaseModel):
    session_id: str
    message: str
    debug: bool = False


def create_app(service: ChatService, static_dir=None):
    """FastAPI app over a ChatService; mounts static files at / when given."""
    from fastapi import FastAPI
    from fastapi.responses import JSONResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="chatrank")

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.post("/api/chat")
    def chat(req: ChatRequest):
        if not req.session_id.strip():
            return JSONResponse({"error": "session_id must be non-empty"}, status_code=400)
        try:
            text, trace = service.respond(req.session_id, req.message)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        body = {"response": text}
        if req.debug:
            body["trace"] = trace.to_dict()
        return JSONResponse(body)

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="static")
    return app
