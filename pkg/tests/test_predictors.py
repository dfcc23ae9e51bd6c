"""Response predictors: target construction, profile heads, tie breaking,
profile averaging, toy learnability."""

import numpy as np
import pytest

from empersona.corpus import (CorpusConfig, Example, Tokenizer, generate_corpus,
                              listener_pool)
from empersona.optim import AdaptiveOptimizer
from empersona.predictors import (ResponsePredictor, TASK_SIZES, average_profiles,
                                  classify_empathy, estimate_listener_personality,
                                  evaluate_predictor, make_target, predict_emotion,
                                  train_predictor)


def _example(**kw):
    base = dict(conv_id="c0", turns=[{"role": "speaker", "text": "hello"}],
                listener_id="L000", response="thanks for sharing that .",
                emotion="sad",
                empathy={"er": True, "ip": False, "ex": False, "intent": "neutral"},
                personality={"extraversion": 0.5, "introverted": 0.2,
                             "thinking": 0.3})
    base.update(kw)
    return Example(**base)


def _model(task):
    return ResponsePredictor(task, Tokenizer().vocab_size, d=16, heads=2,
                             n_blocks=1, d_ff=32, max_len=32,
                             rng=np.random.default_rng(0))


class TestTargets:
    def test_task_inventory(self):
        assert TASK_SIZES == {"personality": 3, "er": 2, "ip": 2, "ex": 2,
                              "intent": 9, "emotion": 8}

    def test_personality_target_is_trait_triple(self):
        t = make_target("personality", _example())
        np.testing.assert_allclose(t, [0.5, 0.2, 0.3])

    def test_flag_targets_are_binary(self):
        assert make_target("er", _example()) == 1
        assert make_target("ip", _example()) == 0

    def test_intent_and_emotion_targets_are_indices(self):
        ex = _example()
        assert 0 <= make_target("intent", ex) < 9
        assert 0 <= make_target("emotion", ex) < 8

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError, match="sarcasm"):
            make_target("sarcasm", _example())


class TestProfileHead:
    def test_zero_head_gives_neutral_profile(self):
        m = _model("personality")
        m.head.weight.data[:] = 0
        m.head.bias.data[:] = 0
        prof = m.predict_profile([5, 6, 7])
        assert prof == (0.0, 0.5, 0.5)

    def test_profile_ranges(self):
        m = _model("personality")
        e, i, t = m.predict_profile([5, 6, 7])
        assert -1.0 <= e <= 1.0 and 0.0 <= i <= 1.0 and 0.0 <= t <= 1.0

    def test_classifier_tie_breaks_low(self):
        m = _model("er")
        m.head.weight.data[:] = 0
        m.head.bias.data[:] = 0
        # equal logits: argmax tie resolves to class 0, read as False
        assert m.predict_class([5, 6]) == 0


class TestAveraging:
    def test_average_profiles_hand_value(self):
        prof = average_profiles([(0.2, 0.4, 0.6), (0.4, 0.6, 0.8)])
        np.testing.assert_allclose(prof, (0.3, 0.5, 0.7))

    def test_average_clamps_to_ranges(self):
        prof = average_profiles([(1.5, -0.2, 1.2), (1.5, -0.2, 1.2)])
        assert prof == (1.0, 0.0, 1.0)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            average_profiles([])

    def test_estimate_listener_personality_averages_pool(self):
        corpus = generate_corpus(CorpusConfig(4, 5, 0, "dialogue"))
        pool = listener_pool(corpus[0])
        tok = Tokenizer()
        m = _model("personality")
        lid = next(iter(pool))
        est = estimate_listener_personality(m, tok, pool[lid])
        manual = average_profiles([m.predict_profile(tok.encode(r))
                                   for r in pool[lid]])
        np.testing.assert_allclose(est, manual)


class TestSuiteHelpers:
    def test_classify_empathy_returns_all_signals(self):
        suite = {t: _model(t) for t in ("er", "ip", "ex", "intent")}
        out = classify_empathy(suite, [5, 6, 7])
        assert set(out) == {"er", "ip", "ex", "intent"}
        assert isinstance(out["er"], bool)
        assert isinstance(out["intent"], str)

    def test_predict_emotion_returns_inventory_name(self):
        from empersona.corpus import EMOTIONS
        out = predict_emotion({"emotion": _model("emotion")}, [5, 6])
        assert out in EMOTIONS


class TestLearnability:
    def test_intent_classifier_learns_planted_signal(self):
        train, _, test = generate_corpus(CorpusConfig(30, 8, 5, "predictor"))
        tok = Tokenizer()
        m = _model("intent")
        opt = AdaptiveOptimizer(m.parameters(), lr=3e-3, clip_norm=5.0)
        train_predictor(m, train, tok, opt, epochs=4, batch_size=16,
                        rng=np.random.default_rng(0))
        rep = evaluate_predictor(m, test, tok)
        assert rep["accuracy"] >= 0.8

    def test_personality_regressor_tracks_archetypes(self):
        train, _, test = generate_corpus(CorpusConfig(30, 8, 5, "predictor"))
        tok = Tokenizer()
        m = _model("personality")
        opt = AdaptiveOptimizer(m.parameters(), lr=3e-3, clip_norm=5.0)
        train_predictor(m, train, tok, opt, epochs=6, batch_size=16,
                        rng=np.random.default_rng(0))
        rep = evaluate_predictor(m, test, tok)
        assert rep["pearson"]["extraversion"] is not None
        assert rep["pearson"]["extraversion"] > 0.5
