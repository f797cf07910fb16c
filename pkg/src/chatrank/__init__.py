"""chatrank: a retrieval chatbot built from an inverted index, a twin-tower
character-trigram semantic model, and a boosted-tree reranker."""

from .cdssm import CdssmConfig, CdssmModel, build_vocab, hash_word, sem_rel, sem_sim, train_cdssm
from .corpus import (
    ConversationTriple,
    FilterConfig,
    MRPair,
    Utterance,
    filter_pair,
    load_pairs,
    load_triples,
    tokenize,
)
from .features import cmm_counts, extract_features
from .index import Candidate, InvertedIndex, build_index, fetch_candidates
from .ranker import (
    MartConfig,
    MartEnsemble,
    build_training_set,
    ndcg_at_k,
    rank_candidates,
    score_ensemble,
    train_mart,
)
from .evaluation import EvalConfig, aggregate_judgments, run_eval
from .service import ChatService, create_app

__version__ = "0.1.0"

__all__ = [
    "CdssmConfig",
    "CdssmModel",
    "build_vocab",
    "hash_word",
    "sem_rel",
    "sem_sim",
    "train_cdssm",
    "ConversationTriple",
    "FilterConfig",
    "MRPair",
    "Utterance",
    "filter_pair",
    "load_pairs",
    "load_triples",
    "tokenize",
    "cmm_counts",
    "extract_features",
    "Candidate",
    "InvertedIndex",
    "build_index",
    "fetch_candidates",
    "MartConfig",
    "MartEnsemble",
    "build_training_set",
    "ndcg_at_k",
    "rank_candidates",
    "score_ensemble",
    "train_mart",
    "EvalConfig",
    "aggregate_judgments",
    "run_eval",
    "ChatService",
    "create_app",
    "__version__",
]
