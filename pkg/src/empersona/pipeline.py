"""End-to-end flows: build, train, calibrate, evaluate, ablate.

Two conditioning modes appear throughout. Training ("gold" labels)
builds each prefix from the example's own response and its planted
empathy labels. Evaluation ("predicted" labels) keeps the gold response
as the exemplar but re-derives every empathy signal with the trained
predictors, so generation is conditioned only on model-visible
information. The listener's past responses always come from the
training pool, never from the split being evaluated.

The base-training and calibration loops are the same function: with
ranking weight beta = 0 the candidate machinery is skipped and the
loop degrades to plain NLL training with an identical batch schedule
and random stream, which keeps the two stages bit-comparable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import calibration, checkpoint, metrics
from .autodiff import Tensor
from .config import Config
from .corpus import CorpusConfig, Example, Tokenizer, generate_corpus, listener_pool
from .decoder import CausalDecoder, teacher_forcing_io
from .decoding import diverse_beam_search
from .optim import AdaptiveOptimizer
from .predictors import (ResponsePredictor, TASK_SIZES, classify_empathy,
                         estimate_listener_personality, predict_emotion,
                         train_predictor)
from .prefix_encoder import MgPE
from .retrieval import (ClassifierEmbedder, Embedder, emotion_label,
                        sample_past_responses, style_label, train_classifier,
                        train_semantic)

TRAITS = calibration.TRAITS


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_generator(tokenizer: Tokenizer, mcfg, seed: int, variant: str | None = None):
    v = variant if variant is not None else mcfg.variant
    mgpe = MgPE(tokenizer.vocab_size, mcfg.d, mcfg.heads, mcfg.enc_blocks,
                mcfg.d_ff, mcfg.max_len, mcfg.n1, mcfg.n2,
                np.random.default_rng([seed, 1]), variant=v)
    dec = CausalDecoder(tokenizer.vocab_size, mcfg.d, mcfg.heads, mcfg.dec_blocks,
                        mcfg.d_ff, mcfg.max_len, np.random.default_rng([seed, 2]))
    return mgpe, dec


def build_predictor_suite(tokenizer: Tokenizer, pcfg, seed: int) -> dict:
    suite = {}
    for i, task in enumerate(TASK_SIZES):
        suite[task] = ResponsePredictor(task, tokenizer.vocab_size, pcfg.d, pcfg.heads,
                                        pcfg.blocks, pcfg.d_ff, pcfg.max_len,
                                        np.random.default_rng([seed, 10 + i]))
    return suite


def train_suite(suite: dict, examples, tokenizer, pcfg, seed: int) -> dict:
    """Train every predictor; returns per-task loss histories."""
    reports = {}
    for i, (task, model) in enumerate(suite.items()):
        opt = AdaptiveOptimizer(model.parameters(), lr=pcfg.lr, clip_norm=5.0)
        reports[task] = train_predictor(model, examples, tokenizer, opt,
                                        pcfg.epochs, pcfg.batch_size,
                                        np.random.default_rng([seed, 20 + i]))
    return reports


def build_embedders(tokenizer: Tokenizer, rcfg, seed: int) -> dict:
    dims = dict(vocab_size=tokenizer.vocab_size, d=rcfg.d, heads=rcfg.heads,
                n_blocks=rcfg.blocks, d_ff=rcfg.d_ff, max_len=rcfg.max_len)
    return {
        "semantic": Embedder(**dims, rng=np.random.default_rng([seed, 31])),
        "style": ClassifierEmbedder(**dims, n_classes=2,
                                    rng=np.random.default_rng([seed, 32])),
        "emotion": ClassifierEmbedder(**dims, n_classes=TASK_SIZES["emotion"],
                                      rng=np.random.default_rng([seed, 33])),
    }


def train_embedders(embedders: dict, examples, tokenizer, rcfg, seed: int) -> dict:
    reports = {"semantic": train_semantic(
        embedders["semantic"], examples, tokenizer,
        AdaptiveOptimizer(embedders["semantic"].parameters(), lr=rcfg.lr, clip_norm=5.0),
        rcfg.epochs, rcfg.batch_size, np.random.default_rng([seed, 41]))}
    for name, label_fn, salt in (("style", style_label, 42), ("emotion", emotion_label, 43)):
        reports[name] = train_classifier(
            embedders[name], examples, tokenizer,
            AdaptiveOptimizer(embedders[name].parameters(), lr=rcfg.lr, clip_norm=5.0),
            label_fn, rcfg.epochs, rcfg.batch_size, np.random.default_rng([seed, salt]))
    return reports


# ---------------------------------------------------------------------------
# example preparation
# ---------------------------------------------------------------------------

@dataclass
class Prepared:
    """Everything the generator needs for one example, already tokenized."""
    context_ids: list
    past_ids: list
    exemplar_ids: list
    input_ids: list
    target_ids: list
    listener_id: str
    response_ids: list
    response_text: str
    context_text: str
    emotion: str
    empathy: dict
    gold_personality: dict | None


def _control_labels(ex: Example, tokenizer, suite, label_source: str):
    if label_source == "gold":
        return ex.empathy, ex.emotion
    if label_source != "predicted":
        raise ValueError(f"label_source must be gold or predicted, got {label_source!r}")
    rid = tokenizer.encode(ex.response)
    return classify_empathy(suite, rid), predict_emotion(suite, rid)


def prepare_examples(examples, tokenizer: Tokenizer, pool, past_n: int, seed: int,
                     suite: dict | None = None, label_source: str = "gold") -> list[Prepared]:
    """Tokenize contexts, sample each listener's past pool, attach controls."""
    out = []
    for i, ex in enumerate(examples):
        rng = np.random.default_rng([seed, 50, i])
        past = sample_past_responses(pool, ex.listener_id, past_n, rng,
                                    exclude=ex.response)
        past_text = " <sep> ".join(past) if past else tokenizer.SEP
        empathy, emotion = _control_labels(ex, tokenizer, suite, label_source)
        response_ids = tokenizer.encode(ex.response)
        exemplar_ids = response_ids + [tokenizer.sep_id] \
            + tokenizer.control_ids(empathy, emotion)
        inp, tgt = teacher_forcing_io(tokenizer.sep_id, tokenizer.eos_id, response_ids)
        out.append(Prepared(
            context_ids=tokenizer.encode(ex.context_text()),
            past_ids=tokenizer.encode(past_text),
            exemplar_ids=exemplar_ids,
            input_ids=inp, target_ids=tgt,
            listener_id=ex.listener_id,
            response_ids=response_ids,
            response_text=ex.response,
            context_text=ex.context_text(),
            emotion=emotion, empathy=empathy,
            gold_personality=ex.personality))
    return out


def estimate_profiles(personality_model, tokenizer, pool) -> dict:
    """Per-listener target profiles from the training response pool."""
    return {lid: estimate_listener_personality(personality_model, tokenizer, responses)
            for lid, responses in pool.items()}


# ---------------------------------------------------------------------------
# training loop (base and calibration share this)
# ---------------------------------------------------------------------------

def _dedupe(token_lists):
    seen = set()
    out = []
    for t in token_lists:
        key = tuple(t)
        if key not in seen:
            seen.add(key)
            out.append(list(t))
    return out


def run_generator_training(mgpe: MgPE, decoder: CausalDecoder, prepared, tokenizer,
                           optimizer: AdaptiveOptimizer, epochs: int, batch_size: int,
                           seed: int, beta: float = 0.0, alpha: float = 1e-3,
                           k: int = 5, gamma: float = 0.5, max_new: int = 24,
                           personality_model=None, target_profiles=None,
                           eval_hook=None) -> list[dict]:
    """Teacher-forced training, optionally with the candidate ranking loss.

    With beta = 0 this is exactly the NLL loop; with beta > 0 each
    example also decodes ``k`` diverse candidates, orders them by
    personality margin against the listener's target profile, and adds
    the hinge ranking loss on their re-scored log-likelihoods.
    """
    if beta != 0.0 and (personality_model is None or target_profiles is None):
        raise ValueError("calibration needs a personality model and target profiles")
    rng = np.random.default_rng([seed, 60])
    sep, eos = tokenizer.sep_id, tokenizer.eos_id
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(prepared))
        nll_sum = lp_sum = 0.0
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            optimizer.zero_grad()
            for j in chunk:
                p = prepared[j]
                prefix = mgpe.build_prefix(p.context_ids, p.past_ids, p.exemplar_ids)
                nll = decoder.nll(prefix, p.input_ids, p.target_ids)
                nll_sum += nll.item()
                if beta != 0.0:
                    cset = diverse_beam_search(decoder, prefix, [sep], eos,
                                               beam_size=k, max_new=max_new,
                                               gamma=gamma)
                    cands = _dedupe([c.tokens for c in cset])
                    if len(cands) >= 2:
                        ranked, _ = calibration.rank_by_profile(
                            cands, personality_model, target_profiles[p.listener_id])
                        lps = []
                        for ci in ranked:
                            ci_inp, ci_tgt = teacher_forcing_io(sep, eos, cands[ci])
                            lps.append(decoder.sequence_logprob(prefix, ci_inp, ci_tgt))
                        lp_loss = calibration.pairwise_margin_loss(lps, alpha)
                    else:
                        lp_loss = Tensor(0.0)
                    lp_sum += lp_loss.item()
                    loss = calibration.combined_loss(nll, lp_loss, beta)
                else:
                    loss = nll
                ad.backward(ad.scale(loss, 1.0 / len(chunk)))
            optimizer.step()
        record = {
            "epoch": epoch,
            "nll": nll_sum / len(prepared),
            "l_p": (lp_sum / len(prepared)) if beta != 0.0 else 0.0,
            "combined": (nll_sum + beta * lp_sum) / len(prepared),
            "eval_pearson_EI": None, "eval_pearson_T": None,
            "distinct1": None, "distinct2": None,
        }
        if eval_hook is not None:
            record.update(eval_hook())
        history.append(record)
    return history


# ---------------------------------------------------------------------------
# generation and evaluation
# ---------------------------------------------------------------------------

def generate_for_prepared(mgpe, decoder, p: Prepared, tokenizer, beam_size: int,
                          gamma: float, max_new: int, use_pr: bool,
                          personality_model=None, target_profile=None) -> list[int]:
    """Decode candidates for one prepared example and pick one.

    Without personality reinforcement the highest per-token log-prob
    hypothesis wins; with it, candidates re-rank by margin to the
    listener's target profile and the closest wins.
    """
    with ad.no_grad():
        prefix = mgpe.build_prefix(p.context_ids, p.past_ids, p.exemplar_ids)
    cset = diverse_beam_search(decoder, prefix, [tokenizer.sep_id], tokenizer.eos_id,
                               beam_size=beam_size, max_new=max_new, gamma=gamma)
    cands = _dedupe([c.tokens for c in cset])
    if use_pr:
        ranked, _ = calibration.rank_by_profile(cands, personality_model, target_profile)
        return cands[ranked[0]]
    scores = {tuple(c.tokens): c.norm_logprob for c in reversed(list(cset))}
    best = max(range(len(cands)), key=lambda i: (scores[tuple(cands[i])], -i))
    return cands[best]


def _mean_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate_generation(mgpe, decoder, suite, prepared, tokenizer, beam_size: int,
                        gamma: float, max_new: int, use_pr: bool,
                        target_profiles: dict, max_examples: int | None = None) -> dict:
    """Correlation and agreement report over a prepared evaluation set.

    Personality correlations compare predicted profiles of generated
    responses against (a) predicted profiles of the gold references and
    (b) the planted listener traits. Empathy-signal agreement compares
    the predictors' reading of each generated response against the
    conditioning signals carried by the prefix.
    """
    rows = prepared[:max_examples] if max_examples else prepared
    gen_profiles, ref_profiles, gold_traits = [], [], []
    agree = {"emotion": [], "er": [], "ip": [], "ex": [], "intent": []}
    texts = []
    pers_model = suite["personality"]
    for p in rows:
        gen_ids = generate_for_prepared(
            mgpe, decoder, p, tokenizer, beam_size, gamma, max_new, use_pr,
            personality_model=pers_model,
            target_profile=target_profiles.get(p.listener_id))
        texts.append(tokenizer.decode(gen_ids))
        gen_profiles.append(pers_model.predict_profile(gen_ids) if gen_ids
                            else (0.0, 0.5, 0.5))
        ref_profiles.append(pers_model.predict_profile(p.response_ids))
        gold_traits.append([p.gold_personality[t] for t in TRAITS]
                           if p.gold_personality else [np.nan] * 3)
        if gen_ids:
            signals = classify_empathy(suite, gen_ids)
            emo = predict_emotion(suite, gen_ids)
        else:
            signals = {"er": False, "ip": False, "ex": False, "intent": "neutral"}
            emo = None
        agree["emotion"].append(float(emo == p.emotion))
        for key in ("er", "ip", "ex", "intent"):
            agree[key].append(float(signals[key] == p.empathy[key]))
    gen = np.array(gen_profiles, dtype=np.float64)
    ref = np.array(ref_profiles, dtype=np.float64)
    gold = np.array(gold_traits, dtype=np.float64)
    pearson_ref = {t: metrics.pearson(gen[:, i], ref[:, i]) for i, t in enumerate(TRAITS)}
    pearson_gold = ({t: metrics.pearson(gen[:, i], gold[:, i]) for i, t in enumerate(TRAITS)}
                    if not np.isnan(gold).any() else {t: None for t in TRAITS})
    report = {
        "n": len(rows),
        "use_pr": use_pr,
        "pearson_gen_ref": pearson_ref,
        "pearson_gen_gold": pearson_gold,
        "EI": _mean_or_none([pearson_ref["extraversion"], pearson_ref["introverted"]]),
        "T": pearson_ref["thinking"],
        "EI_gold": _mean_or_none([pearson_gold["extraversion"], pearson_gold["introverted"]]),
        "T_gold": pearson_gold["thinking"],
        "EAcc": _mean_or_none([np.mean(agree["emotion"]), np.mean(agree["er"])]),
        "IPEX": _mean_or_none([np.mean(agree["ip"]), np.mean(agree["ex"])]),
        "Intent": float(np.mean(agree["intent"])),
        "EmpAgree": float(np.mean([np.mean(agree[k]) for k in
                                   ("er", "ip", "ex", "intent", "emotion")])),
        "distinct1": metrics.distinct_n(texts, 1),
        "distinct2": metrics.distinct_n(texts, 2),
    }
    return report


def make_eval_hook(mgpe, decoder, suite, prepared_val, tokenizer, dcfg, gamma,
                   target_profiles, subset: int):
    """Light per-epoch evaluation for training reports."""
    def hook():
        rep = evaluate_generation(mgpe, decoder, suite, prepared_val, tokenizer,
                                  dcfg.beam_size, gamma, dcfg.max_new, use_pr=False,
                                  target_profiles=target_profiles, max_examples=subset)
        return {"eval_pearson_EI": rep["EI"], "eval_pearson_T": rep["T"],
                "distinct1": rep["distinct1"], "distinct2": rep["distinct2"]}
    return hook


# ---------------------------------------------------------------------------
# experiment drivers
# ---------------------------------------------------------------------------

def make_corpora(cfg: Config):
    """Dialogue corpus for the generator, listener-disjoint one for predictors."""
    ccfg = cfg.corpus
    dialogue = generate_corpus(CorpusConfig(ccfg.n_listeners, ccfg.convs_per_listener,
                                            ccfg.seed, "dialogue", ccfg.jitter))
    predictor = generate_corpus(CorpusConfig(ccfg.n_listeners, ccfg.convs_per_listener,
                                             ccfg.seed + 1000, "predictor", ccfg.jitter))
    return dialogue, predictor


def run_experiment(cfg: Config, seed: int, variant: str, calibrate: bool,
                   shared=None, eval_split: str = "test") -> dict:
    """Train (and optionally calibrate) one generator; evaluate both ways.

    ``shared`` may carry precomputed pieces (tokenizer, corpora, trained
    predictor suite, prepared example caches) so sweeps don't repeat
    them per variant.
    """
    shared = shared if shared is not None else {}

    def cached(key, fn):
        if key not in shared:
            shared[key] = fn()
        return shared[key]

    tokenizer = cached("tokenizer", Tokenizer)
    (d_train, d_val, d_test), (p_train, _, _) = cached("corpora", lambda: make_corpora(cfg))

    def fresh_suite():
        suite = build_predictor_suite(tokenizer, cfg.predictor, cfg.training.seed)
        train_suite(suite, p_train, tokenizer, cfg.predictor, cfg.training.seed)
        return suite

    suite = cached("suite", fresh_suite)
    pool = cached("pool", lambda: listener_pool(d_train))
    profiles = cached("profiles",
                      lambda: estimate_profiles(suite["personality"], tokenizer, pool))
    past_n = cfg.retrieval.past_pool_n
    prep_train = cached("prep_train", lambda: prepare_examples(
        d_train, tokenizer, pool, past_n, cfg.training.seed, label_source="gold"))
    eval_examples = d_test if eval_split == "test" else d_val
    prep_eval = cached(f"prep_eval_{eval_split}", lambda: prepare_examples(
        eval_examples, tokenizer, pool, past_n, cfg.training.seed,
        suite=suite, label_source="predicted"))

    mgpe, decoder = build_generator(tokenizer, cfg.model, seed, variant=variant)
    params = mgpe.parameters() + decoder.parameters()
    opt = AdaptiveOptimizer(params, lr=cfg.training.lr, clip_norm=cfg.training.clip_norm)
    base_history = run_generator_training(
        mgpe, decoder, prep_train, tokenizer, opt, cfg.training.epochs,
        cfg.training.batch_size, seed, beta=0.0)
    result = {"seed": seed, "variant": variant, "base_history": base_history}
    result["base_eval"] = {
        "no_pr": evaluate_generation(mgpe, decoder, suite, prep_eval, tokenizer,
                                     cfg.decoding.beam_size, cfg.calibration.gamma,
                                     cfg.decoding.max_new, False, profiles),
        "pr": evaluate_generation(mgpe, decoder, suite, prep_eval, tokenizer,
                                  cfg.decoding.beam_size, cfg.calibration.gamma,
                                  cfg.decoding.max_new, True, profiles),
    }
    if calibrate:
        cal = cfg.calibration
        opt2 = AdaptiveOptimizer(params, lr=cal.lr, clip_norm=cfg.training.clip_norm)
        result["calibration_history"] = run_generator_training(
            mgpe, decoder, prep_train, tokenizer, opt2, cal.epochs,
            cfg.training.batch_size, seed + 500, beta=cal.beta, alpha=cal.alpha,
            k=cal.k, gamma=cal.gamma, max_new=cfg.decoding.max_new,
            personality_model=suite["personality"], target_profiles=profiles)
        result["calibrated_eval"] = {
            "no_pr": evaluate_generation(mgpe, decoder, suite, prep_eval, tokenizer,
                                         cfg.decoding.beam_size, cal.gamma,
                                         cfg.decoding.max_new, False, profiles),
            "pr": evaluate_generation(mgpe, decoder, suite, prep_eval, tokenizer,
                                      cfg.decoding.beam_size, cal.gamma,
                                      cfg.decoding.max_new, True, profiles),
        }
    result["models"] = {"mgpe": mgpe, "decoder": decoder}
    return result


def ablate(cfg: Config, seeds, shared=None) -> dict:
    """Prefix-variant sweep: 4 variants x {with, without} reinforcement.

    Rows carry per-seed evaluations plus across-seed medians of the
    headline numbers. Reinforced rows come from calibrated models with
    margin-based selection; plain rows from base models with likelihood
    selection.
    """
    from .prefix_encoder import VARIANTS
    shared = shared if shared is not None else {}
    rows = []
    for variant in VARIANTS:
        per_seed = [run_experiment(cfg, seed, variant, calibrate=True, shared=shared)
                    for seed in seeds]
        for pr in (False, True):
            key = "pr" if pr else "no_pr"
            evals = [r["calibrated_eval" if pr else "base_eval"][key] for r in per_seed]
            rows.append({
                "variant": variant,
                "reinforced": pr,
                "median_EI": _median_or_none([e["EI"] for e in evals]),
                "median_T": _median_or_none([e["T"] for e in evals]),
                "median_EI_gold": _median_or_none([e["EI_gold"] for e in evals]),
                "median_EAcc": _median_or_none([e["EAcc"] for e in evals]),
                "median_IPEX": _median_or_none([e["IPEX"] for e in evals]),
                "median_Intent": _median_or_none([e["Intent"] for e in evals]),
                "median_EmpAgree": _median_or_none([e["EmpAgree"] for e in evals]),
                "per_seed": evals,
            })
    return {"seeds": list(seeds), "rows": rows}


def _median_or_none(values):
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def save_suite(suite: dict, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for task, model in suite.items():
        checkpoint.save_model(directory / f"predictor_{task}.ckpt", model)


def load_suite(suite: dict, directory) -> None:
    directory = Path(directory)
    for task, model in suite.items():
        checkpoint.load_model(directory / f"predictor_{task}.ckpt", model)


def write_json(path, payload) -> None:
    """Canonical JSON: sorted keys, stable float repr, trailing newline."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
