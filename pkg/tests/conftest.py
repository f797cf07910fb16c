"""Shared fixtures: the bundled desk corpus and artifacts trained on it.

Heavier artifacts (semantic model, per-system ensembles, saved files) are
session-scoped so the acceptance run trains each of them once.
"""

from pathlib import Path

import pytest

from chatrank.cdssm import CdssmConfig, train_cdssm
from chatrank.corpus import load_pairs, load_triples
from chatrank.evaluation import train_system_ensembles
from chatrank.index import build_index

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

DESK_CDSSM_CONFIG = CdssmConfig(
    vocab_max=1500,
    conv_window=3,
    conv_dim=64,
    sem_dim=32,
    gamma=10.0,
    neg_per_pos=4,
    learning_rate=0.1,
    epochs=4,
    minibatch=32,
    seed=7,
)

ENSEMBLE_SEED = 13
EVAL_SEED = 17
TRAIN_SPLIT = 800


@pytest.fixture(scope="session")
def desk_pairs():
    pairs, rejected = load_pairs(DATA_DIR / "desk_pairs.jsonl")
    assert rejected == 0
    return pairs


@pytest.fixture(scope="session")
def desk_triples():
    triples, rejected = load_triples(DATA_DIR / "desk_triples.jsonl")
    assert rejected == 0
    return triples


@pytest.fixture(scope="session")
def desk_split(desk_triples):
    return desk_triples[:TRAIN_SPLIT], desk_triples[TRAIN_SPLIT:]


@pytest.fixture(scope="session")
def desk_index(desk_pairs):
    return build_index(desk_pairs)


@pytest.fixture(scope="session")
def desk_model(desk_pairs):
    model, report = train_cdssm(desk_pairs, DESK_CDSSM_CONFIG)
    assert report.epoch_losses[-1] < report.epoch_losses[0]
    return model


@pytest.fixture(scope="session")
def desk_ensembles(desk_model, desk_split):
    train, _ = desk_split
    return train_system_ensembles(desk_model, train, seed=ENSEMBLE_SEED)


@pytest.fixture(scope="session")
def desk_artifacts(tmp_path_factory, desk_index, desk_model, desk_ensembles):
    """Artifacts saved to disk, as the CLI would leave them."""
    root = tmp_path_factory.mktemp("artifacts")
    paths = {
        "index": root / "desk.cirx",
        "cdssm": root / "desk.cdsm",
        "ranker": root / "desk.mart",
    }
    desk_index.save(paths["index"])
    desk_model.save(paths["cdssm"])
    desk_ensembles["semrel_cmm_ccf"].save(paths["ranker"])
    return paths
