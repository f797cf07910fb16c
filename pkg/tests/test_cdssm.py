import numpy as np
import pytest

from chatrank.cdssm import (
    CdssmConfig,
    CdssmModel,
    TowerParams,
    WordHasher,
    build_vocab,
    cosine,
    embed,
    example_loss,
    example_loss_and_grads,
    hash_word,
    per_example_losses,
    response_probabilities,
    sem_rel,
    sem_sim,
    train_cdssm,
    utterance_csr,
    word_trigrams,
)
from chatrank.corpus import MRPair, Utterance
from chatrank.synth import make_separable_pairs

TINY = CdssmConfig(vocab_max=20, conv_window=3, conv_dim=5, sem_dim=4, gamma=10.0)


def _tiny_model(seed=0, tokens=(("ab", "cd"), ("ce", "fa"), ("df",))):
    vocab = build_vocab(tokens, TINY.vocab_max)
    rng = np.random.default_rng(seed)
    return CdssmModel(
        vocab=vocab,
        m_tower=TowerParams.init(rng, vocab.size, TINY),
        r_tower=TowerParams.init(rng, vocab.size, TINY),
        config=TINY,
    )


class TestVocab:
    def test_cap_applies(self):
        corpus = [[f"word{i:04d}" for i in range(200)]]
        full = build_vocab(corpus, 100000)
        assert full.size > 50
        capped = build_vocab(corpus, 50)
        assert capped.size == 50

    def test_default_cap_of_5000(self):
        # a corpus with well over 5000 distinct trigrams caps at exactly 5000
        import itertools
        letters = "abcdefghijklmnopqrstuvwxyz"
        words = ["".join(w) for w in itertools.islice(itertools.product(letters, repeat=3), 6000)]
        full = build_vocab([words], 10**6)
        assert full.size > 5000
        capped = build_vocab([words], CdssmConfig().vocab_max)
        assert capped.size == 5000

    def test_single_char_word(self):
        vocab = build_vocab([["a"]], 10)
        assert vocab.trigrams == ["#a#"]

    def test_frequency_then_lexicographic_ties(self):
        # "ab" appears twice so its trigrams outrank the four frequency-1
        # trigrams; at the cutoff the lexicographically smallest tie survives
        vocab = build_vocab([["ab", "ab", "cd", "ce"]], 3)
        assert vocab.trigrams == ["#ab", "ab#", "#cd"]

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            build_vocab([], 10)
        with pytest.raises(ValueError):
            build_vocab([[]], 10)


class TestHashWord:
    def test_good(self):
        vocab = build_vocab([["good"]], 10)
        vec = hash_word("good", vocab)
        hit = {vocab.trigrams[i] for i in np.nonzero(vec)[0]}
        assert hit == {"#go", "goo", "ood", "od#"}
        assert vec.sum() == 4

    def test_single_char(self):
        vocab = build_vocab([["a"]], 10)
        vec = hash_word("a", vocab)
        assert vec.tolist() == [1.0]

    def test_oov_word_is_zero(self):
        vocab = build_vocab([["good"]], 10)
        assert not hash_word("zebra", vocab).any()

    def test_repeated_trigram_counts(self):
        vocab = build_vocab([["aaaa"]], 10)
        vec = hash_word("aaaa", vocab)
        assert vec[vocab.index.get("aaa")] == 2.0

    def test_trigram_enumeration(self):
        assert word_trigrams("a") == ["#a#"]
        assert word_trigrams("good") == ["#go", "goo", "ood", "od#"]


class TestEmbed:
    def test_shape_and_open_interval(self):
        model = _tiny_model()
        vec = embed(model.m_tower, Utterance.make("ab cd ce"), model.vocab, model.config)
        assert vec.shape == (TINY.sem_dim,)
        assert np.all(np.abs(vec) < 1.0)

    def test_zero_parameters_give_zero_vector(self):
        model = _tiny_model()
        zero = model.m_tower.zeros_like()
        vec = embed(zero, Utterance.make("ab cd"), model.vocab, model.config)
        assert np.array_equal(vec, np.zeros(TINY.sem_dim))

    def test_single_token_uses_padded_window(self):
        model = _tiny_model()
        vec = embed(model.m_tower, Utterance.make("ab"), model.vocab, model.config)
        assert np.all(np.isfinite(vec))

    def test_empty_utterance_rejected(self):
        model = _tiny_model()
        with pytest.raises(ValueError):
            embed(model.m_tower, Utterance.make(""), model.vocab, model.config)

    def test_all_oov_embeds_to_zero_with_zero_bias(self):
        model = _tiny_model()
        model.m_tower.conv_b[:] = 0.0
        model.m_tower.proj_b[:] = 0.0
        vec = embed(model.m_tower, Utterance.make("zz qq"), model.vocab, model.config)
        assert np.array_equal(vec, np.zeros(TINY.sem_dim))


class TestScores:
    def test_shared_towers_make_self_relevance_one(self):
        model = _tiny_model()
        model.r_tower = TowerParams(*(a.copy() for a in model.m_tower.arrays()))
        x = Utterance.make("ab cd")
        assert sem_rel(model, x, x) == pytest.approx(1.0)

    def test_cosine_scale_invariance(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=8)
        b = rng.normal(size=8)
        assert cosine(3.7 * a, b) == pytest.approx(cosine(a, b))
        assert cosine(a, 0.002 * b) == pytest.approx(cosine(a, b))

    def test_zero_norm_scores_zero(self):
        assert cosine(np.zeros(4), np.ones(4)) == 0.0

    def test_sem_sim_symmetric_and_reflexive(self):
        model = _tiny_model()
        x = Utterance.make("ab cd")
        y = Utterance.make("ce df")
        assert sem_sim(model, x, y) == pytest.approx(sem_sim(model, y, x))
        assert sem_sim(model, x, x) == pytest.approx(1.0)

    def test_disjoint_texts_not_perfectly_similar(self):
        for seed in range(5):
            model = _tiny_model(seed=seed)
            s = sem_sim(model, Utterance.make("ab"), Utterance.make("cd"))
            assert abs(s) < 1.0

    def test_empty_utterance_rejected(self):
        model = _tiny_model()
        with pytest.raises(ValueError):
            sem_rel(model, Utterance.make(""), Utterance.make("ab"))


class TestSoftmax:
    def test_gamma_zero_is_exactly_uniform(self):
        cos = np.array([0.9, -0.2, 0.4, 0.0, 0.7])
        probs = response_probabilities(cos, 0.0)
        assert np.array_equal(probs, np.full(5, 1.0 / 5.0))

    def test_sums_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            probs = response_probabilities(rng.uniform(-1, 1, size=5), 10.0)
            assert abs(probs.sum() - 1.0) < 1e-6

    def test_monotone_in_cosine(self):
        probs = response_probabilities(np.array([0.9, 0.1, -0.5]), 10.0)
        assert probs[0] > probs[1] > probs[2]


class TestGradients:
    def test_analytic_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        hasher_tokens = [["ab", "cd"], ["ce", "fa"], ["df", "ab"], ["cd"]]
        vocab = build_vocab(hasher_tokens, TINY.vocab_max)
        hasher = WordHasher(vocab)
        m_csr = utterance_csr(["ab", "cd"], hasher, 3)
        r_csrs = [utterance_csr(t, hasher, 3) for t in (["ce", "fa"], ["df"], ["cd", "ab"])]
        for draw in range(5):
            m_tower = TowerParams.init(rng, vocab.size, TINY)
            r_tower = TowerParams.init(rng, vocab.size, TINY)
            mg, rg = m_tower.zeros_like(), r_tower.zeros_like()
            _, _ = example_loss_and_grads(m_tower, r_tower, m_csr, r_csrs, TINY.gamma, mg, rg)
            h = 1e-6
            for tower, grads in ((m_tower, mg), (r_tower, rg)):
                for arr, g in zip(tower.arrays(), grads.arrays()):
                    flat, gflat = arr.ravel(), g.ravel()
                    for k in rng.choice(flat.size, size=min(6, flat.size), replace=False):
                        orig = flat[k]
                        flat[k] = orig + h
                        lp = example_loss(m_tower, r_tower, m_csr, r_csrs, TINY.gamma)
                        flat[k] = orig - h
                        lm = example_loss(m_tower, r_tower, m_csr, r_csrs, TINY.gamma)
                        flat[k] = orig
                        num = (lp - lm) / (2 * h)
                        assert abs(num - gflat[k]) <= 1e-4 * max(abs(num), abs(gflat[k]), 1e-5)


class TestTraining:
    def test_needs_two_pairs(self):
        pair = MRPair(0, Utterance.make("hi"), Utterance.make("hello"))
        with pytest.raises(ValueError):
            train_cdssm([pair], CdssmConfig(conv_dim=4, sem_dim=3))

    def test_loss_decreases_on_separable_toy(self):
        pairs = make_separable_pairs(120, 12, seed=3)
        cfg = CdssmConfig(
            vocab_max=300, conv_dim=24, sem_dim=12, learning_rate=0.1,
            epochs=3, minibatch=8, seed=5,
        )
        model, report = train_cdssm(pairs, cfg)
        assert report.epoch_losses[2] < report.epoch_losses[0]
        assert report.max_prob_sum_error < 1e-6

    def test_training_is_deterministic(self):
        pairs = make_separable_pairs(40, 8, seed=1)
        cfg = CdssmConfig(vocab_max=200, conv_dim=8, sem_dim=4, epochs=1, minibatch=8, seed=9)
        m1, r1 = train_cdssm(pairs, cfg)
        m2, r2 = train_cdssm(pairs, cfg)
        assert r1.epoch_losses == r2.epoch_losses
        for a, b in zip(m1.m_tower.arrays(), m2.m_tower.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_trained_model_ranks_paired_above_random(self):
        pairs = make_separable_pairs(150, 15, seed=2)
        cfg = CdssmConfig(
            vocab_max=400, conv_dim=24, sem_dim=12, learning_rate=0.1,
            epochs=3, minibatch=8, seed=4,
        )
        model, _ = train_cdssm(pairs, cfg)
        heldout = make_separable_pairs(80, 15, seed=77)
        rng = np.random.default_rng(5)
        wins = 0
        for i, p in enumerate(heldout):
            j = int(rng.integers(0, len(heldout) - 1))
            j = j + 1 if j >= i else j
            paired = sem_rel(model, p.message, p.response)
            random_other = sem_rel(model, p.message, heldout[j].response)
            wins += paired > random_other
        assert wins / len(heldout) >= 0.9

    def test_gamma_validation(self):
        with pytest.raises(ValueError):
            CdssmConfig(gamma=0.0).validate()
        with pytest.raises(ValueError):
            CdssmConfig(conv_window=2).validate()

    def test_default_configuration(self):
        cfg = CdssmConfig()
        assert (cfg.vocab_max, cfg.conv_window, cfg.conv_dim, cfg.sem_dim) == (5000, 3, 300, 128)
        assert cfg.gamma == 10.0
        assert cfg.neg_per_pos == 4
        cfg.validate()

    def test_per_example_losses_are_order_independent(self):
        pairs = make_separable_pairs(30, 6, seed=8)
        model = _model_for(pairs)
        rng = np.random.default_rng(0)
        negatives = [list(rng.choice([j for j in range(len(pairs)) if j != i], size=3, replace=False))
                     for i in range(len(pairs))]
        base = per_example_losses(model, pairs, negatives)
        perm = rng.permutation(len(pairs))
        inv = np.empty(len(pairs), dtype=int)
        inv[perm] = np.arange(len(pairs))
        # permute the corpus but keep each example's sampled responses
        shuffled_pairs = [pairs[int(i)] for i in perm]
        shuffled_negs = [[int(inv[j]) for j in negatives[int(i)]] for i in perm]
        shuffled = per_example_losses(model, shuffled_pairs, shuffled_negs)
        np.testing.assert_array_equal(base[perm], shuffled)


def _model_for(pairs, seed=0):
    cfg = CdssmConfig(vocab_max=300, conv_dim=8, sem_dim=4, epochs=1, minibatch=8, seed=seed)
    model, _ = train_cdssm(pairs, cfg)
    return model


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        pairs = make_separable_pairs(30, 6, seed=1)
        model = _model_for(pairs)
        p1, p2 = tmp_path / "a.cdsm", tmp_path / "b.cdsm"
        model.save(p1)
        CdssmModel.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_scores_stable_at_stored_precision(self, tmp_path):
        pairs = make_separable_pairs(30, 6, seed=1)
        model = _model_for(pairs)
        path = tmp_path / "m.cdsm"
        model.save(path)
        loaded = CdssmModel.load(path)
        path2 = tmp_path / "m2.cdsm"
        loaded.save(path2)
        reloaded = CdssmModel.load(path2)
        x, y = pairs[0].message, pairs[3].response
        assert sem_rel(loaded, x, y) == sem_rel(reloaded, x, y)
        assert sem_sim(loaded, x, y) == sem_sim(reloaded, x, y)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.cdsm"
        path.write_bytes(b"WHAT" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            CdssmModel.load(path)

    def test_config_survives_round_trip(self, tmp_path):
        pairs = make_separable_pairs(30, 6, seed=1)
        cfg = CdssmConfig(vocab_max=123, conv_dim=8, sem_dim=4, gamma=2.5,
                          neg_per_pos=3, learning_rate=0.05, epochs=1, minibatch=8, seed=42)
        model, _ = train_cdssm(pairs, cfg)
        path = tmp_path / "m.cdsm"
        model.save(path)
        assert CdssmModel.load(path).config == cfg
