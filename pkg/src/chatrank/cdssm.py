"""Twin-tower convolutional semantic model over character trigrams.

Each tower maps an utterance to a low-dimensional vector: per token
position, the trigram count vectors of a sliding word window are
concatenated (zero-padded at the boundaries), pushed through a tanh
convolution, max-pooled over positions, and projected through a second
tanh layer. Scoring functions:

  - relevance of Y as a response to X: cosine(m_tower(X), r_tower(Y))
  - similarity of X and Y in response space: cosine(r_tower(X), r_tower(Y))

Training maximizes the likelihood of each observed response against
uniformly sampled negative responses via a softmax over smoothed cosines.
All math runs in float64; model files store float32 (see
docs/FILE_FORMATS.md).
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .corpus import MRPair, Utterance

MAGIC = b"CDSM"
FORMAT_VERSION = 1

NORM_EPS = 1e-12


@dataclass
class CdssmConfig:
    vocab_max: int = 5000
    conv_window: int = 3
    conv_dim: int = 300
    sem_dim: int = 128
    gamma: float = 10.0
    neg_per_pos: int = 4
    learning_rate: float = 0.1
    epochs: int = 5
    minibatch: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.vocab_max < 1 or self.conv_dim < 1 or self.sem_dim < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.conv_window < 1 or self.conv_window % 2 == 0:
            raise ValueError("conv_window must be a positive odd integer")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.neg_per_pos < 1:
            raise ValueError("neg_per_pos must be >= 1")
        if self.learning_rate <= 0 or self.epochs < 1 or self.minibatch < 1:
            raise ValueError("invalid optimizer settings")


def word_trigrams(word: str) -> list[str]:
    """All contiguous length-3 substrings of the boundary-marked word."""
    marked = "#" + word + "#"
    return [marked[i : i + 3] for i in range(len(marked) - 2)]


class TrigramVocab:
    """Dense trigram -> index map, most frequent first."""

    def __init__(self, trigrams: Sequence[str]):
        self.trigrams = list(trigrams)
        self.index = {t: i for i, t in enumerate(self.trigrams)}
        if len(self.index) != len(self.trigrams):
            raise ValueError("duplicate trigrams in vocabulary")

    @property
    def size(self) -> int:
        return len(self.trigrams)

    def __contains__(self, trigram: str) -> bool:
        return trigram in self.index


def build_vocab(corpus: Iterable[Sequence[str]], max_size: int) -> TrigramVocab:
    """Top max_size trigrams by frequency; ties keep the lexicographically smaller."""
    counts: Counter[str] = Counter()
    for tokens in corpus:
        for word in tokens:
            counts.update(word_trigrams(word))
    if not counts:
        raise ValueError("cannot build a trigram vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return TrigramVocab([t for t, _ in ranked[:max_size]])


def hash_word(word: str, vocab: TrigramVocab) -> np.ndarray:
    """Counts of the word's boundary-marked trigrams over the vocabulary.

    Out-of-vocabulary trigrams are dropped; the result can be all-zero.
    """
    vec = np.zeros(vocab.size)
    for tg in word_trigrams(word):
        i = vocab.index.get(tg)
        if i is not None:
            vec[i] += 1.0
    return vec


class WordHasher:
    """Caches the sparse trigram counts of words for one vocabulary."""

    def __init__(self, vocab: TrigramVocab):
        self.vocab = vocab
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def sparse(self, word: str) -> tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        counts: dict[int, float] = {}
        for tg in word_trigrams(word):
            i = self.vocab.index.get(tg)
            if i is not None:
                counts[i] = counts.get(i, 0.0) + 1.0
        idx = np.array(sorted(counts), dtype=np.int64)
        val = np.array([counts[i] for i in idx], dtype=np.float64)
        self._cache[word] = (idx, val)
        return idx, val


@dataclass
class UtteranceCsr:
    """Per-token-position window vectors in CSR form over the concatenated space."""

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    @property
    def n_positions(self) -> int:
        return self.indptr.shape[0] - 1


def utterance_csr(tokens: Sequence[str], hasher: WordHasher, window: int) -> UtteranceCsr:
    if not tokens:
        raise ValueError("cannot vectorize an empty utterance")
    vsize = hasher.vocab.size
    half = window // 2
    indptr = np.zeros(len(tokens) + 1, dtype=np.int64)
    idx_parts: list[np.ndarray] = []
    val_parts: list[np.ndarray] = []
    nnz = 0
    for i in range(len(tokens)):
        for slot, j in enumerate(range(i - half, i + half + 1)):
            if 0 <= j < len(tokens):
                idx, val = hasher.sparse(tokens[j])
                if idx.shape[0]:
                    idx_parts.append(idx + slot * vsize)
                    val_parts.append(val)
                    nnz += idx.shape[0]
        indptr[i + 1] = nnz
    if nnz:
        indices = np.concatenate(idx_parts)
        values = np.concatenate(val_parts)
    else:
        indices = np.zeros(0, dtype=np.int64)
        values = np.zeros(0, dtype=np.float64)
    return UtteranceCsr(indptr, indices, values)


@dataclass
class TowerParams:
    """One tower. conv_w is stored input-major: (window * vocab, conv_dim)."""

    conv_w: np.ndarray
    conv_b: np.ndarray
    proj_w: np.ndarray
    proj_b: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, vocab_size: int, config: CdssmConfig) -> "TowerParams":
        in_dim = config.conv_window * vocab_size
        conv_scale = 0.1
        proj_scale = math.sqrt(2.0 / (config.conv_dim + config.sem_dim))
        return cls(
            conv_w=rng.normal(0.0, conv_scale, size=(in_dim, config.conv_dim)),
            conv_b=np.zeros(config.conv_dim),
            proj_w=rng.normal(0.0, proj_scale, size=(config.sem_dim, config.conv_dim)),
            proj_b=np.zeros(config.sem_dim),
        )

    def zeros_like(self) -> "TowerParams":
        return TowerParams(
            np.zeros_like(self.conv_w),
            np.zeros_like(self.conv_b),
            np.zeros_like(self.proj_w),
            np.zeros_like(self.proj_b),
        )

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.conv_w, self.conv_b, self.proj_w, self.proj_b)


@dataclass
class CdssmModel:
    vocab: TrigramVocab
    m_tower: TowerParams
    r_tower: TowerParams
    config: CdssmConfig
    _hasher: WordHasher | None = field(default=None, repr=False, compare=False)

    @property
    def hasher(self) -> WordHasher:
        if self._hasher is None or self._hasher.vocab is not self.vocab:
            self._hasher = WordHasher(self.vocab)
        return self._hasher

    # -- persistence -----------------------------------------------------

    def save(self, path) -> None:
        cfg = self.config
        buf = bytearray()
        buf += MAGIC
        buf += struct.pack("<I", FORMAT_VERSION)
        buf += struct.pack(
            "<iiiidiidiq",
            cfg.vocab_max,
            cfg.conv_window,
            cfg.conv_dim,
            cfg.sem_dim,
            cfg.gamma,
            cfg.neg_per_pos,
            cfg.epochs,
            cfg.learning_rate,
            cfg.minibatch,
            cfg.seed,
        )
        buf += struct.pack("<I", self.vocab.size)
        for tg in self.vocab.trigrams:
            tb = tg.encode("utf-8")
            buf += struct.pack("<I", len(tb)) + tb
        for tower in (self.m_tower, self.r_tower):
            # file layout is the logical orientation: conv [conv_dim x in_dim]
            buf += np.ascontiguousarray(tower.conv_w.T).astype("<f4").tobytes()
            buf += tower.conv_b.astype("<f4").tobytes()
            buf += np.ascontiguousarray(tower.proj_w).astype("<f4").tobytes()
            buf += tower.proj_b.astype("<f4").tobytes()
        Path(path).write_bytes(bytes(buf))

    @classmethod
    def load(cls, path) -> "CdssmModel":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic)")
        (version,) = struct.unpack_from("<I", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format version {version}")
        off = 8
        fields = struct.unpack_from("<iiiidiidiq", data, off)
        off += struct.calcsize("<iiiidiidiq")
        cfg = CdssmConfig(
            vocab_max=fields[0],
            conv_window=fields[1],
            conv_dim=fields[2],
            sem_dim=fields[3],
            gamma=fields[4],
            neg_per_pos=fields[5],
            epochs=fields[6],
            learning_rate=fields[7],
            minibatch=fields[8],
            seed=fields[9],
        )
        (vsize,) = struct.unpack_from("<I", data, off)
        off += 4
        trigrams = []
        for _ in range(vsize):
            (ln,) = struct.unpack_from("<I", data, off)
            off += 4
            trigrams.append(data[off : off + ln].decode("utf-8"))
            off += ln
        vocab = TrigramVocab(trigrams)
        in_dim = cfg.conv_window * vsize
        towers = []
        for _ in range(2):
            conv_w = np.frombuffer(data, "<f4", in_dim * cfg.conv_dim, off).reshape(
                cfg.conv_dim, in_dim
            )
            off += 4 * in_dim * cfg.conv_dim
            conv_b = np.frombuffer(data, "<f4", cfg.conv_dim, off)
            off += 4 * cfg.conv_dim
            proj_w = np.frombuffer(data, "<f4", cfg.sem_dim * cfg.conv_dim, off).reshape(
                cfg.sem_dim, cfg.conv_dim
            )
            off += 4 * cfg.sem_dim * cfg.conv_dim
            proj_b = np.frombuffer(data, "<f4", cfg.sem_dim, off)
            off += 4 * cfg.sem_dim
            towers.append(
                TowerParams(
                    conv_w=np.ascontiguousarray(conv_w.T, dtype=np.float64),
                    conv_b=conv_b.astype(np.float64),
                    proj_w=proj_w.astype(np.float64),
                    proj_b=proj_b.astype(np.float64),
                )
            )
        return cls(vocab=vocab, m_tower=towers[0], r_tower=towers[1], config=cfg)


# ---------------------------------------------------------------------------
# Forward / scoring
# ---------------------------------------------------------------------------


@dataclass
class ForwardState:
    """Intermediates kept for backpropagation."""

    csr: UtteranceCsr
    hidden: np.ndarray  # (positions, conv_dim), tanh applied
    argmax: np.ndarray  # (conv_dim,) winning position per channel
    pooled: np.ndarray  # (conv_dim,)
    output: np.ndarray  # (sem_dim,), tanh applied


def forward(tower: TowerParams, csr: UtteranceCsr) -> ForwardState:
    hidden = kernels.conv_tanh_forward(csr.indptr, csr.indices, csr.values, tower.conv_w, tower.conv_b)
    argmax = np.argmax(hidden, axis=0)
    pooled = hidden[argmax, np.arange(hidden.shape[1])]
    output = np.tanh(tower.proj_w @ pooled + tower.proj_b)
    return ForwardState(csr=csr, hidden=hidden, argmax=argmax, pooled=pooled, output=output)


def embed(tower: TowerParams, utt: Utterance, vocab: TrigramVocab, config: CdssmConfig,
          hasher: WordHasher | None = None) -> np.ndarray:
    """Semantic vector of an utterance under one tower; entries in (-1, 1)."""
    if not utt.tokens:
        raise ValueError("cannot embed an empty utterance")
    hasher = hasher or WordHasher(vocab)
    return forward(tower, utterance_csr(utt.tokens, hasher, config.conv_window)).output


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped into [-1, 1]; 0.0 whenever either norm
    falls below 1e-12."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_EPS or nb < NORM_EPS:
        return 0.0
    return min(1.0, max(-1.0, float(a @ b) / (na * nb)))


def embed_m(model: CdssmModel, utt: Utterance) -> np.ndarray:
    return embed(model.m_tower, utt, model.vocab, model.config, model.hasher)


def embed_r(model: CdssmModel, utt: Utterance) -> np.ndarray:
    return embed(model.r_tower, utt, model.vocab, model.config, model.hasher)


def sem_rel(model: CdssmModel, x: Utterance, y: Utterance) -> float:
    """Confidence that Y is a relevant response to X: cosine(m(X), r(Y))."""
    return cosine(embed_m(model, x), embed_r(model, y))


def sem_sim(model: CdssmModel, x: Utterance, y: Utterance) -> float:
    """Similarity of X and Y in response space: cosine(r(X), r(Y))."""
    return cosine(embed_r(model, x), embed_r(model, y))


class EmbeddingCache:
    """Memoizes tower embeddings of utterances for an immutable model."""

    def __init__(self, model: CdssmModel, max_entries: int = 100_000):
        self.model = model
        self.max_entries = max_entries
        self._m: dict[str, np.ndarray] = {}
        self._r: dict[str, np.ndarray] = {}

    def _get(self, store: dict, utt: Utterance, fn) -> np.ndarray:
        vec = store.get(utt.raw)
        if vec is None:
            if len(store) >= self.max_entries:
                store.clear()
            vec = fn(self.model, utt)
            store[utt.raw] = vec
        return vec

    def embed_m(self, utt: Utterance) -> np.ndarray:
        return self._get(self._m, utt, embed_m)

    def embed_r(self, utt: Utterance) -> np.ndarray:
        return self._get(self._r, utt, embed_r)

    def sem_rel(self, x: Utterance, y: Utterance) -> float:
        return cosine(self.embed_m(x), self.embed_r(y))

    def sem_sim(self, x: Utterance, y: Utterance) -> float:
        return cosine(self.embed_r(x), self.embed_r(y))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def response_probabilities(cosines: np.ndarray, gamma: float) -> np.ndarray:
    """Softmax over smoothed cosines: P(candidate j) = exp(g*c_j) / sum_k exp(g*c_k).

    Stable under shifting; gamma == 0 gives the exactly uniform distribution.
    """
    z = gamma * np.asarray(cosines, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _backprop_tower(tower: TowerParams, state: ForwardState, d_out: np.ndarray,
                    grads: TowerParams) -> None:
    du = d_out * (1.0 - state.output * state.output)
    grads.proj_w += np.outer(du, state.pooled)
    grads.proj_b += du
    dv = tower.proj_w.T @ du
    cols = np.arange(state.hidden.shape[1])
    d_pre = np.zeros_like(state.hidden)
    winners = state.hidden[state.argmax, cols]
    d_pre[state.argmax, cols] = dv * (1.0 - winners * winners)
    grads.conv_b += d_pre.sum(axis=0)
    kernels.conv_scatter_grad(state.csr.indptr, state.csr.indices, state.csr.values, d_pre, grads.conv_w)


def _cosine_with_grads(m_vec: np.ndarray, r_vec: np.ndarray):
    nm = float(np.linalg.norm(m_vec))
    nr = float(np.linalg.norm(r_vec))
    if nm < NORM_EPS or nr < NORM_EPS:
        zero_m = np.zeros_like(m_vec)
        zero_r = np.zeros_like(r_vec)
        return 0.0, zero_m, zero_r
    c = float(m_vec @ r_vec) / (nm * nr)
    dm = r_vec / (nm * nr) - c * m_vec / (nm * nm)
    dr = m_vec / (nm * nr) - c * r_vec / (nr * nr)
    return c, dm, dr


def example_loss_and_grads(
    m_tower: TowerParams,
    r_tower: TowerParams,
    m_csr: UtteranceCsr,
    r_csrs: Sequence[UtteranceCsr],
    gamma: float,
    m_grads: TowerParams | None = None,
    r_grads: TowerParams | None = None,
) -> tuple[float, np.ndarray]:
    """Negative log likelihood of candidate 0 among r_csrs, plus its softmax.

    When gradient accumulators are supplied, d(loss)/d(params) is added to
    them. Candidate 0 is the observed response; the rest are negatives.
    """
    m_state = forward(m_tower, m_csr)
    r_states = [forward(r_tower, csr) for csr in r_csrs]
    cos = np.empty(len(r_states))
    d_m = []
    d_r = []
    for j, rs in enumerate(r_states):
        c, dm, dr = _cosine_with_grads(m_state.output, rs.output)
        cos[j] = c
        d_m.append(dm)
        d_r.append(dr)
    probs = response_probabilities(cos, gamma)
    loss = -math.log(max(float(probs[0]), 1e-300))
    if m_grads is not None and r_grads is not None:
        dcos = gamma * probs.copy()
        dcos[0] -= gamma
        d_m_total = np.zeros_like(m_state.output)
        for j in range(len(r_states)):
            d_m_total += dcos[j] * d_m[j]
            _backprop_tower(r_tower, r_states[j], dcos[j] * d_r[j], r_grads)
        _backprop_tower(m_tower, m_state, d_m_total, m_grads)
    return loss, probs


def example_loss(
    m_tower: TowerParams,
    r_tower: TowerParams,
    m_csr: UtteranceCsr,
    r_csrs: Sequence[UtteranceCsr],
    gamma: float,
) -> float:
    return example_loss_and_grads(m_tower, r_tower, m_csr, r_csrs, gamma)[0]


@dataclass
class TrainReport:
    epoch_losses: list[float]
    max_prob_sum_error: float
    n_examples: int


def sample_negatives(rng: np.random.Generator, n_pairs: int, i: int, count: int) -> np.ndarray:
    """count indices drawn uniformly without replacement from [0, n_pairs) \\ {i}."""
    draw = rng.choice(n_pairs - 1, size=count, replace=False)
    return np.where(draw >= i, draw + 1, draw)


def train_cdssm(
    pairs: Sequence[MRPair],
    config: CdssmConfig,
    vocab: TrigramVocab | None = None,
) -> tuple[CdssmModel, TrainReport]:
    """Minibatch SGD on the softmax likelihood; negatives resampled per epoch.

    Returns the trained model plus a per-epoch mean-loss trace. Aborts with
    diagnostics if the loss goes non-finite. Deterministic for a fixed seed.
    """
    config.validate()
    if len(pairs) < 2:
        raise ValueError("training needs at least 2 pairs so negatives exist")
    if vocab is None:
        token_stream = [p.message.tokens for p in pairs] + [p.response.tokens for p in pairs]
        vocab = build_vocab(token_stream, config.vocab_max)
    hasher = WordHasher(vocab)
    m_csrs = [utterance_csr(p.message.tokens, hasher, config.conv_window) for p in pairs]
    r_csrs = [utterance_csr(p.response.tokens, hasher, config.conv_window) for p in pairs]

    rng = np.random.default_rng(config.seed)
    m_tower = TowerParams.init(rng, vocab.size, config)
    r_tower = TowerParams.init(rng, vocab.size, config)

    n = len(pairs)
    n_neg = min(config.neg_per_pos, n - 1)
    epoch_losses: list[float] = []
    max_prob_err = 0.0
    for epoch in range(config.epochs):
        negatives = [sample_negatives(rng, n, i, n_neg) for i in range(n)]
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.minibatch):
            batch = order[start : start + config.minibatch]
            m_grads = m_tower.zeros_like()
            r_grads = r_tower.zeros_like()
            for i in batch:
                cand = [r_csrs[i]] + [r_csrs[j] for j in negatives[i]]
                loss, probs = example_loss_and_grads(
                    m_tower, r_tower, m_csrs[i], cand, config.gamma, m_grads, r_grads
                )
                if not math.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}, example {int(i)}: {loss!r}"
                    )
                max_prob_err = max(max_prob_err, abs(float(probs.sum()) - 1.0))
                loss_sum += loss
            scale = config.learning_rate / batch.shape[0]
            for param, grad in zip(m_tower.arrays(), m_grads.arrays()):
                param -= scale * grad
            for param, grad in zip(r_tower.arrays(), r_grads.arrays()):
                param -= scale * grad
        epoch_losses.append(loss_sum / n)
    model = CdssmModel(vocab=vocab, m_tower=m_tower, r_tower=r_tower, config=config)
    return model, TrainReport(
        epoch_losses=epoch_losses, max_prob_sum_error=max_prob_err, n_examples=n
    )


def per_example_losses(
    model: CdssmModel, pairs: Sequence[MRPair], negatives: Sequence[Sequence[int]]
) -> np.ndarray:
    """Loss of each (pair, fixed negatives) example at the model's parameters.

    Depends only on the example itself, never on corpus order.
    """
    hasher = model.hasher
    window = model.config.conv_window
    m_csrs = [utterance_csr(p.message.tokens, hasher, window) for p in pairs]
    r_csrs = [utterance_csr(p.response.tokens, hasher, window) for p in pairs]
    out = np.empty(len(pairs))
    for i, negs in enumerate(negatives):
        cand = [r_csrs[i]] + [r_csrs[j] for j in negs]
        out[i] = example_loss(model.m_tower, model.r_tower, m_csrs[i], cand, model.config.gamma)
    return out
