"""End-to-end training pipeline: preparation, loops, reports, drivers."""

import numpy as np
import pytest

from empersona import autodiff as ad
from empersona import pipeline
from empersona.config import Config
from empersona.corpus import CorpusConfig, Tokenizer, generate_corpus, listener_pool
from empersona.optim import AdaptiveOptimizer
from empersona.pipeline import (Prepared, _dedupe, build_generator,
                                build_predictor_suite, estimate_profiles,
                                evaluate_generation, make_corpora,
                                prepare_examples, run_experiment,
                                run_generator_training, train_suite, write_json)


def tiny_cfg():
    cfg = Config()
    cfg.corpus.n_listeners = 6
    cfg.corpus.convs_per_listener = 4
    cfg.model.d = 16
    cfg.model.heads = 2
    cfg.model.enc_blocks = 1
    cfg.model.dec_blocks = 1
    cfg.model.d_ff = 32
    cfg.model.max_len = 32
    cfg.model.n1 = 2
    cfg.model.n2 = 2
    cfg.predictor.d = 16
    cfg.predictor.d_ff = 32
    cfg.predictor.epochs = 1
    cfg.predictor.lr = 1e-3
    cfg.training.epochs = 1
    cfg.training.batch_size = 8
    cfg.training.lr = 1e-3
    cfg.decoding.beam_size = 2
    cfg.decoding.max_new = 4
    cfg.calibration.k = 2
    cfg.calibration.epochs = 1
    cfg.retrieval.past_pool_n = 3
    return cfg


@pytest.fixture(scope="module")
def world():
    """One tiny corpus plus a trained predictor suite, reused across tests."""
    cfg = tiny_cfg()
    tok = Tokenizer()
    (d_train, d_val, d_test), (p_train, _, _) = make_corpora(cfg)
    suite = build_predictor_suite(tok, cfg.predictor, 0)
    train_suite(suite, p_train, tok, cfg.predictor, 0)
    pool = listener_pool(d_train)
    return {"cfg": cfg, "tok": tok, "train": d_train, "val": d_val,
            "test": d_test, "suite": suite, "pool": pool}


class TestPrepare:
    def test_exemplar_layout(self, world):
        tok, cfg = world["tok"], world["cfg"]
        prep = prepare_examples(world["train"][:5], tok, world["pool"],
                                cfg.retrieval.past_pool_n, 0)
        for p in prep:
            n = len(p.response_ids)
            assert p.exemplar_ids[:n] == p.response_ids
            assert p.exemplar_ids[n] == tok.sep_id
            controls = p.exemplar_ids[n + 1:]
            assert controls == tok.control_ids(p.empathy, p.emotion)
            assert len(controls) == 5

    def test_teacher_forcing_alignment(self, world):
        tok, cfg = world["tok"], world["cfg"]
        prep = prepare_examples(world["train"][:5], tok, world["pool"],
                                cfg.retrieval.past_pool_n, 0)
        for p in prep:
            assert p.input_ids[0] == tok.sep_id
            assert p.target_ids[-1] == tok.eos_id
            assert p.input_ids[1:] == p.target_ids[:-1]
            assert p.target_ids[:-1] == p.response_ids

    def test_gold_labels_copied(self, world):
        tok, cfg = world["tok"], world["cfg"]
        prep = prepare_examples(world["train"][:5], tok, world["pool"],
                                cfg.retrieval.past_pool_n, 0, label_source="gold")
        for ex, p in zip(world["train"][:5], prep):
            assert p.empathy == ex.empathy
            assert p.emotion == ex.emotion

    def test_predicted_labels_come_from_suite(self, world):
        tok, cfg = world["tok"], world["cfg"]
        prep = prepare_examples(world["test"][:5], tok, world["pool"],
                                cfg.retrieval.past_pool_n, 0,
                                suite=world["suite"], label_source="predicted")
        from empersona.predictors import classify_empathy, predict_emotion
        for ex, p in zip(world["test"][:5], prep):
            rid = tok.encode(ex.response)
            assert p.empathy == classify_empathy(world["suite"], rid)
            assert p.emotion == predict_emotion(world["suite"], rid)

    def test_unknown_label_source_rejected(self, world):
        with pytest.raises(ValueError, match="label_source"):
            prepare_examples(world["train"][:1], world["tok"], world["pool"],
                             3, 0, label_source="oracular")

    def test_past_pool_excludes_own_response(self, world):
        tok, cfg = world["tok"], world["cfg"]
        # give each listener few enough responses that exclusion is observable
        prep = prepare_examples(world["train"], tok, world["pool"], 100, 0)
        for ex, p in zip(world["train"], prep):
            past_text = tok.decode(p.past_ids)
            own = world["pool"][ex.listener_id]
            # full pool requested: everything but one copy of the gold response
            assert past_text.split(" <sep> ").count(ex.response) \
                == own.count(ex.response) - 1

    def test_deterministic(self, world):
        tok, cfg = world["tok"], world["cfg"]
        a = prepare_examples(world["train"][:8], tok, world["pool"], 3, 7)
        b = prepare_examples(world["train"][:8], tok, world["pool"], 3, 7)
        assert a == b
        c = prepare_examples(world["train"][:8], tok, world["pool"], 3, 8)
        assert any(x.past_ids != y.past_ids for x, y in zip(a, c))


class TestDedupe:
    def test_keeps_first_occurrence_order(self):
        lists = [[1, 2], [3], [1, 2], [4, 5], [3]]
        assert _dedupe(lists) == [[1, 2], [3], [4, 5]]

    def test_empty(self):
        assert _dedupe([]) == []


class TestTrainingLoop:
    def _fresh(self, world):
        cfg = world["cfg"]
        mgpe, decoder = build_generator(world["tok"], cfg.model, seed=3)
        opt = AdaptiveOptimizer(mgpe.parameters() + decoder.parameters(),
                                lr=1e-3, clip_norm=1.0)
        return mgpe, decoder, opt

    def test_plain_run_is_deterministic(self, world):
        cfg, tok = world["cfg"], world["tok"]
        prep = prepare_examples(world["train"][:8], tok, world["pool"], 3, 0)
        histories, finals = [], []
        for _ in range(2):
            mgpe, decoder, opt = self._fresh(world)
            hist = run_generator_training(mgpe, decoder, prep, tok, opt,
                                          epochs=2, batch_size=4, seed=0)
            histories.append(hist)
            finals.append(np.concatenate([p.data.ravel() for p in
                                          mgpe.parameters() + decoder.parameters()]))
        assert histories[0] == histories[1]
        assert np.array_equal(finals[0], finals[1])

    def test_history_record_shape(self, world):
        cfg, tok = world["cfg"], world["tok"]
        prep = prepare_examples(world["train"][:6], tok, world["pool"], 3, 0)
        mgpe, decoder, opt = self._fresh(world)
        hist = run_generator_training(mgpe, decoder, prep, tok, opt,
                                      epochs=2, batch_size=4, seed=0)
        assert [h["epoch"] for h in hist] == [0, 1]
        for h in hist:
            assert h["l_p"] == 0.0
            assert h["combined"] == pytest.approx(h["nll"], rel=1e-6)
            assert h["eval_pearson_EI"] is None

    def test_nll_decreases(self, world):
        cfg, tok = world["cfg"], world["tok"]
        prep = prepare_examples(world["train"][:6], tok, world["pool"], 3, 0)
        mgpe, decoder, opt = self._fresh(world)
        hist = run_generator_training(mgpe, decoder, prep, tok, opt,
                                      epochs=4, batch_size=6, seed=0)
        assert hist[-1]["nll"] < hist[0]["nll"]

    def test_calibration_requires_profile_machinery(self, world):
        tok = world["tok"]
        prep = prepare_examples(world["train"][:2], tok, world["pool"], 3, 0)
        mgpe, decoder, opt = self._fresh(world)
        with pytest.raises(ValueError, match="personality"):
            run_generator_training(mgpe, decoder, prep, tok, opt, epochs=1,
                                   batch_size=2, seed=0, beta=1.0)

    def test_ranking_term_engages(self, world):
        cfg, tok = world["cfg"], world["tok"]
        prep = prepare_examples(world["train"][:4], tok, world["pool"], 3, 0)
        profiles = estimate_profiles(world["suite"]["personality"], tok, world["pool"])
        mgpe, decoder, opt = self._fresh(world)
        hist = run_generator_training(mgpe, decoder, prep, tok, opt, epochs=1,
                                      batch_size=4, seed=0, beta=1.0, k=3,
                                      max_new=4,
                                      personality_model=world["suite"]["personality"],
                                      target_profiles=profiles)
        h = hist[0]
        assert h["combined"] == pytest.approx(h["nll"] + h["l_p"], rel=1e-6)


class TestProfiles:
    def test_one_profile_per_listener_in_range(self, world):
        profiles = estimate_profiles(world["suite"]["personality"], world["tok"],
                                     world["pool"])
        assert set(profiles) == set(world["pool"])
        for ex, intro, think in profiles.values():
            assert -1.0 <= ex <= 1.0
            assert 0.0 <= intro <= 1.0
            assert 0.0 <= think <= 1.0


@pytest.fixture(scope="module")
def report_setup(world):
    cfg, tok = world["cfg"], world["tok"]
    prep = prepare_examples(world["test"][:6], tok, world["pool"], 3, 0,
                            suite=world["suite"], label_source="predicted")
    mgpe, decoder = build_generator(tok, cfg.model, seed=5)
    profiles = estimate_profiles(world["suite"]["personality"], tok, world["pool"])
    return mgpe, decoder, prep, profiles


class TestEvaluation:
    def test_report_structure(self, world, report_setup):
        mgpe, decoder, prep, profiles = report_setup
        rep = evaluate_generation(mgpe, decoder, world["suite"], prep, world["tok"],
                                  beam_size=2, gamma=0.5, max_new=4, use_pr=False,
                                  target_profiles=profiles)
        assert rep["n"] == len(prep)
        assert rep["use_pr"] is False
        for key in ("EI", "T", "EI_gold", "T_gold", "EAcc", "IPEX", "Intent",
                    "EmpAgree", "distinct1", "distinct2"):
            assert key in rep
        assert 0.0 <= rep["EmpAgree"] <= 1.0
        assert 0.0 < rep["distinct1"] <= 1.0
        assert set(rep["pearson_gen_ref"]) == {"extraversion", "introverted",
                                               "thinking"}

    def test_max_examples_truncates(self, world, report_setup):
        mgpe, decoder, prep, profiles = report_setup
        rep = evaluate_generation(mgpe, decoder, world["suite"], prep, world["tok"],
                                  beam_size=2, gamma=0.5, max_new=4, use_pr=False,
                                  target_profiles=profiles, max_examples=3)
        assert rep["n"] == 3

    def test_pr_flag_recorded(self, world, report_setup):
        mgpe, decoder, prep, profiles = report_setup
        rep = evaluate_generation(mgpe, decoder, world["suite"], prep, world["tok"],
                                  beam_size=2, gamma=0.5, max_new=4, use_pr=True,
                                  target_profiles=profiles, max_examples=3)
        assert rep["use_pr"] is True


class TestRunExperiment:
    def test_shared_cache_reused(self, world):
        cfg = tiny_cfg()
        shared = {}
        r1 = run_experiment(cfg, 0, "C", calibrate=False, shared=shared)
        suite_obj = shared["suite"]
        r2 = run_experiment(cfg, 1, "C", calibrate=False, shared=shared)
        assert shared["suite"] is suite_obj
        for key in ("tokenizer", "corpora", "pool", "profiles",
                    "prep_train", "prep_eval_test"):
            assert key in shared
        assert r1["base_eval"]["no_pr"]["n"] == r2["base_eval"]["no_pr"]["n"]

    def test_reruns_bit_identical(self, world):
        cfg = tiny_cfg()
        reports = []
        for _ in range(2):
            res = run_experiment(cfg, 0, "C", calibrate=False, shared={})
            reports.append(res["base_eval"])
        assert reports[0] == reports[1]

    def test_calibrated_run_has_both_stages(self, world):
        cfg = tiny_cfg()
        cfg.training.epochs = 1
        res = run_experiment(cfg, 0, "C", calibrate=True, shared={})
        assert "calibration_history" in res
        assert set(res["calibrated_eval"]) == {"no_pr", "pr"}
        assert set(res["base_eval"]) == {"no_pr", "pr"}
        assert res["calibration_history"][0]["l_p"] >= 0.0


class TestArtifacts:
    def test_write_json_canonical(self, tmp_path):
        a = {"b": 1, "a": [1.5, 2.25]}
        b = {"a": [1.5, 2.25], "b": 1}
        pa, pb = tmp_path / "a.json", tmp_path / "b.json"
        write_json(pa, a)
        write_json(pb, b)
        assert pa.read_bytes() == pb.read_bytes()
        assert pa.read_text().endswith("\n")

    def test_suite_round_trip(self, world, tmp_path):
        from empersona.pipeline import load_suite, save_suite
        cfg = world["cfg"]
        save_suite(world["suite"], tmp_path)
        fresh = build_predictor_suite(world["tok"], cfg.predictor, 99)
        load_suite(fresh, tmp_path)
        for task, model in world["suite"].items():
            want = [p.data for p in model.parameters()]
            got = [p.data for p in fresh[task].parameters()]
            assert all(np.array_equal(w, g) for w, g in zip(want, got))
