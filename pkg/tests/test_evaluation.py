import json
import math

import numpy as np
import pytest

from chatrank.corpus import ConversationTriple, Utterance
from chatrank.evaluation import (
    FEATURE_MASKS,
    SYSTEMS,
    EvalConfig,
    JudgmentRecord,
    SystemMetrics,
    aggregate_judgments,
    build_candidate_sets,
    load_judgments,
    run_eval,
    write_report,
    _ranked_labels,
)


class TestJudgmentAggregation:
    def test_unanimous_counts_toward_precision(self):
        mean, p1 = aggregate_judgments([JudgmentRecord(0, (1, 1, 1, 1, 1))])
        assert mean == 5.0 and p1 == 100.0

    def test_three_votes_excluded(self):
        mean, p1 = aggregate_judgments([JudgmentRecord(0, (1, 1, 1, 0, 0))])
        assert mean == 3.0 and p1 == 0.0

    def test_four_votes_included(self):
        mean, p1 = aggregate_judgments([JudgmentRecord(0, (1, 1, 1, 1, 0))])
        assert mean == 4.0 and p1 == 100.0

    def test_wrong_vote_count_rejected(self):
        with pytest.raises(ValueError):
            JudgmentRecord(0, (1, 1, 1))
        with pytest.raises(ValueError):
            JudgmentRecord(0, (1, 1, 1, 1, 2))

    def test_matches_brute_force_on_random_matrix(self):
        rng = np.random.default_rng(0)
        votes = rng.integers(0, 2, size=(1000, 5))
        records = [JudgmentRecord(i, tuple(int(v) for v in row)) for i, row in enumerate(votes)]
        mean, p1 = aggregate_judgments(records)
        total = 0
        hits = 0
        for row in votes:
            s = 0
            for v in row:
                s += int(v)
            total += s
            hits += 1 if s >= 4 else 0
        assert mean == total / 1000
        assert p1 == 100.0 * hits / 1000

    def test_bounds(self):
        rng = np.random.default_rng(1)
        votes = rng.integers(0, 2, size=(50, 5))
        records = [JudgmentRecord(i, tuple(int(v) for v in row)) for i, row in enumerate(votes)]
        mean, p1 = aggregate_judgments(records)
        assert 0.0 <= mean <= 5.0
        assert 0.0 <= p1 <= 100.0

    def test_p1_is_100_iff_every_record_supermajority(self):
        all_high = [JudgmentRecord(i, (1, 1, 1, 1, i % 2)) for i in range(10)]
        _, p1 = aggregate_judgments(all_high)
        assert p1 == 100.0
        mixed = all_high + [JudgmentRecord(99, (1, 1, 1, 0, 0))]
        _, p1 = aggregate_judgments(mixed)
        assert p1 < 100.0

    def test_empty_records_rejected(self):
        with pytest.raises(ValueError):
            aggregate_judgments([])

    def test_load_judgments(self, tmp_path):
        path = tmp_path / "votes.jsonl"
        rows = [{"id": 0, "votes": [1, 1, 1, 1, 0]}, {"id": 1, "votes": [0, 0, 1, 0, 0]}]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        records = load_judgments(path)
        assert [r.score for r in records] == [4, 1]


def _triples(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        t = int(rng.integers(0, 20))
        out.append(
            ConversationTriple(
                context=Utterance.make(f"ctx{t} filler"),
                message=Utterance.make(f"msg{i} topic{t}"),
                response=Utterance.make(f"resp{i} echo{t}"),
            )
        )
    return out


class TestCandidateSets:
    def test_true_response_is_candidate_zero(self):
        triples = _triples(30)
        sets = build_candidate_sets(triples, 9, seed=0)
        for triple, cands in zip(triples, sets):
            assert cands[0] is triple.response
            assert len(cands) == 10

    def test_distractors_come_from_other_triples(self):
        triples = _triples(30)
        sets = build_candidate_sets(triples, 9, seed=1)
        for i, cands in enumerate(sets):
            for cand in cands[1:]:
                assert cand is not triples[i].response

    def test_deterministic(self):
        triples = _triples(25)
        a = build_candidate_sets(triples, 9, seed=5)
        b = build_candidate_sets(triples, 9, seed=5)
        assert [[c.raw for c in s] for s in a] == [[c.raw for c in s] for s in b]

    def test_too_few_triples_rejected(self):
        with pytest.raises(ValueError):
            build_candidate_sets(_triples(5), 9, seed=0)


class TestRankedLabels:
    def test_oracle_scorer_gives_r1(self):
        labels = _ranked_labels([10.0, 1.0, 2.0])
        assert labels == [1, 0, 0]

    def test_tie_keeps_lower_candidate_id_first(self):
        labels = _ranked_labels([5.0, 5.0, 5.0])
        assert labels == [1, 0, 0]

    def test_true_response_last(self):
        labels = _ranked_labels([0.0, 3.0, 2.0])
        assert labels == [0, 0, 1]


class TestMonteCarloSanity:
    def test_oracle_ranker_hits_r1_one(self):
        triples = _triples(50)
        sets = build_candidate_sets(triples, 9, seed=2)
        hits = sum(_ranked_labels([1.0] + [0.0] * 9)[0] for _ in sets)
        assert hits == len(sets)

    def test_uniform_random_ranker_near_one_tenth(self):
        triples = _triples(1200, seed=3)
        sets = build_candidate_sets(triples, 9, seed=3)
        rng = np.random.default_rng(99)
        hits = 0
        for _ in sets:
            scores = list(rng.uniform(0, 1, size=10))
            hits += _ranked_labels(scores)[0]
        rate = hits / len(sets)
        assert abs(rate - 0.1) <= 0.03


class TestRunEval:
    def test_empty_heldout_rejected(self, desk_index, desk_model, desk_ensembles):
        cfg = EvalConfig(systems=("ir_status",))
        with pytest.raises(ValueError):
            run_eval(cfg, desk_index, desk_model, desk_ensembles, triples=[])

    def test_missing_ensemble_rejected(self, desk_index, desk_model):
        cfg = EvalConfig(systems=("semrel_cmm",))
        with pytest.raises(ValueError, match="ensemble"):
            run_eval(cfg, desk_index, desk_model, {}, triples=_triples(30))

    def test_unknown_system_rejected(self):
        with pytest.raises(ValueError):
            EvalConfig(systems=("nonsense",)).validate()

    def test_deterministic_for_fixed_seed(self, desk_index, desk_model, desk_ensembles, desk_split):
        _, heldout = desk_split
        cfg = EvalConfig(distractors_per_query=9, systems=SYSTEMS, seed=21)
        a = run_eval(cfg, desk_index, desk_model, desk_ensembles, triples=heldout[:120])
        b = run_eval(cfg, desk_index, desk_model, desk_ensembles, triples=heldout[:120])
        for system in SYSTEMS:
            assert a[system] == b[system]

    def test_ndcg1_equals_r1_with_single_positive(
        self, desk_index, desk_model, desk_ensembles, desk_split
    ):
        _, heldout = desk_split
        cfg = EvalConfig(distractors_per_query=9, systems=("semrel_cmm_ccf",), seed=23)
        metrics = run_eval(cfg, desk_index, desk_model, desk_ensembles, triples=heldout[:100])
        m = metrics["semrel_cmm_ccf"]
        assert m.r_at_1 == pytest.approx(m.ndcg_at_1)
        assert m.ndcg_at_1 <= m.ndcg_at_2 <= m.ndcg_at_3 <= 1.0

    def test_token_identical_distractor_never_beats_true_response(
        self, desk_index, desk_model, desk_ensembles, desk_split
    ):
        _, heldout = desk_split
        triple = heldout[0]
        clone = Utterance.make(triple.response.raw)
        from chatrank.features import extract_features
        from chatrank.ranker import score_ensemble

        for system in ("ir_status_cmm", "semrel_cmm", "semrel_cmm_ccf"):
            ens = desk_ensembles[system]
            mask = FEATURE_MASKS[system]
            scores = []
            for cand in (triple.response, clone):
                fv = extract_features(desk_model, triple.context, triple.message, cand)
                scores.append(score_ensemble(ens, fv * mask))
            assert _ranked_labels(scores)[0] == 1  # the true response keeps rank 1


def test_feature_masks_shapes():
    assert set(FEATURE_MASKS) == {"ir_status_cmm", "semrel_cmm", "semrel_cmm_ccf"}
    assert FEATURE_MASKS["ir_status_cmm"].tolist() == [0, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0]
    assert FEATURE_MASKS["semrel_cmm"].tolist() == [1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0]
    assert FEATURE_MASKS["semrel_cmm_ccf"].tolist() == [1] * 11


def test_write_report(tmp_path):
    metrics = {
        "ir_status": SystemMetrics(0.5, 0.5, 0.6, 0.7, 100),
        "semrel_cmm_ccf": SystemMetrics(0.9, 0.9, 0.95, 0.97, 100),
    }
    path = tmp_path / "report.tsv"
    write_report(path, metrics, judgments_summary=(4.2, 82.0, 1000))
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["system", "r_at_1", "ndcg_at_1", "ndcg_at_2", "ndcg_at_3", "n_queries"]
    assert lines[1].startswith("ir_status\t0.500000")
    assert any(l.startswith("judged_mean_score\t4.2") for l in lines)
    assert any(l.startswith("judged_precision_at_1\t82.0") for l in lines)
