"""Command line entry points.

Subcommands compose through a run directory: ``corpus-gen`` writes the
datasets and a config snapshot, later stages read earlier artifacts and
add their own. All artifacts are deterministic functions of the config,
so rerunning a command in a fresh directory reproduces files byte for
byte.

    empersona corpus-gen --run-dir demo
    empersona train-predictors --run-dir demo
    empersona train-generator --run-dir demo
    empersona calibrate --run-dir demo
    empersona retrieve-index --run-dir demo
    empersona evaluate --run-dir demo --stage calibrated --pr on
    empersona generate --run-dir demo --use-index --context "i feel lost ..."
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import calibration, checkpoint, pipeline
from .config import (Config, apply_override, load_config, runs_root, save_config)
from .corpus import Tokenizer, archetype_unigram_tv, listener_pool, read_jsonl, write_jsonl
from .decoding import diverse_beam_search, nucleus_sample
from .predictors import classify_empathy, evaluate_predictor, predict_emotion
from .retrieval import RetrievalIndex, build_index, retrieve

SPLITS = ("train", "val", "test")


def _run_dir(arg: str) -> Path:
    p = Path(arg)
    return p if p.is_absolute() else runs_root() / p


def _load_cfg(args) -> Config:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        rd = getattr(args, "run_dir", None)
        snapshot = _run_dir(rd) / "config.ini" if rd else None
        cfg = load_config(snapshot) if snapshot is not None and snapshot.exists() \
            else Config()
    for spec in getattr(args, "set", None) or []:
        apply_override(cfg, spec)
    return cfg


def _read_corpus(run_dir: Path, mode: str):
    return tuple(read_jsonl(run_dir / "corpus" / f"{mode}_{s}.jsonl") for s in SPLITS)


def _load_suite(cfg: Config, tokenizer: Tokenizer, run_dir: Path) -> dict:
    suite = pipeline.build_predictor_suite(tokenizer, cfg.predictor, cfg.training.seed)
    pipeline.load_suite(suite, run_dir / "predictors")
    return suite


def _stage_dir(run_dir: Path, stage: str, variant: str) -> Path:
    return run_dir / f"{stage}_{variant.replace('+', '')}"


def _load_generator(cfg: Config, tokenizer: Tokenizer, run_dir: Path, stage: str,
                    variant: str):
    mgpe, dec = pipeline.build_generator(tokenizer, cfg.model, cfg.training.seed,
                                         variant=variant)
    d = _stage_dir(run_dir, stage, variant)
    checkpoint.load_model(d / "mgpe.ckpt", mgpe)
    checkpoint.load_model(d / "decoder.ckpt", dec)
    return mgpe, dec


def _save_generator(run_dir: Path, stage: str, variant: str, mgpe, dec, history):
    d = _stage_dir(run_dir, stage, variant)
    d.mkdir(parents=True, exist_ok=True)
    checkpoint.save_model(d / "mgpe.ckpt", mgpe)
    checkpoint.save_model(d / "decoder.ckpt", dec)
    pipeline.write_json(d / "history.json", history)


def _prepared_eval(cfg, tokenizer, run_dir, suite, split: str):
    corpus = _read_corpus(run_dir, "dialogue")
    pool = listener_pool(corpus[0])
    examples = corpus[SPLITS.index(split)]
    prepared = pipeline.prepare_examples(examples, tokenizer, pool,
                                         cfg.retrieval.past_pool_n, cfg.training.seed,
                                         suite=suite, label_source="predicted")
    profiles = pipeline.estimate_profiles(suite["personality"], tokenizer, pool)
    return prepared, profiles, pool


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_corpus_gen(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(args.run_dir)
    (run_dir / "corpus").mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.ini")
    stats = {}
    for mode, splits in zip(("dialogue", "predictor"),
                            pipeline.make_corpora(cfg)):
        for split, examples in zip(SPLITS, splits):
            write_jsonl(run_dir / "corpus" / f"{mode}_{split}.jsonl", examples)
        stats[mode] = {"sizes": {s: len(e) for s, e in zip(SPLITS, splits)},
                       "train_unigram_tv": archetype_unigram_tv(splits[0])}
    pipeline.write_json(run_dir / "corpus" / "stats.json", stats)
    print(f"wrote corpora to {run_dir / 'corpus'}: "
          + ", ".join(f"{m} {st['sizes']}" for m, st in stats.items()))
    return 0


def cmd_train_predictors(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(args.run_dir)
    tokenizer = Tokenizer()
    p_train, _, p_test = _read_corpus(run_dir, "predictor")
    suite = pipeline.build_predictor_suite(tokenizer, cfg.predictor, cfg.training.seed)
    histories = pipeline.train_suite(suite, p_train, tokenizer, cfg.predictor,
                                     cfg.training.seed)
    pipeline.save_suite(suite, run_dir / "predictors")
    report = {task: {"history": histories[task],
                     "test": evaluate_predictor(model, p_test, tokenizer)}
              for task, model in suite.items()}
    pipeline.write_json(run_dir / "predictors" / "metrics.json", report)
    for task in suite:
        print(f"{task}: {report[task]['test']}")
    return 0


def cmd_train_generator(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(args.run_dir)
    tokenizer = Tokenizer()
    variant = args.variant or cfg.model.variant
    d_train, *_ = _read_corpus(run_dir, "dialogue")
    pool = listener_pool(d_train)
    prepared = pipeline.prepare_examples(d_train, tokenizer, pool,
                                         cfg.retrieval.past_pool_n,
                                         cfg.training.seed, label_source="gold")
    mgpe, dec = pipeline.build_generator(tokenizer, cfg.model, cfg.training.seed,
                                         variant=variant)
    from .optim import AdaptiveOptimizer
    opt = AdaptiveOptimizer(mgpe.parameters() + dec.parameters(),
                            lr=cfg.training.lr, clip_norm=cfg.training.clip_norm)
    history = pipeline.run_generator_training(
        mgpe, dec, prepared, tokenizer, opt, cfg.training.epochs,
        cfg.training.batch_size, cfg.training.seed, beta=0.0)
    _save_generator(run_dir, "generator", variant, mgpe, dec, history)
    print(f"base generator [{variant}] trained, final nll {history[-1]['nll']:.4f}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(args.run_dir)
    tokenizer = Tokenizer()
    variant = args.variant or cfg.model.variant
    mgpe, dec = _load_generator(cfg, tokenizer, run_dir, "generator", variant)
    suite = _load_suite(cfg, tokenizer, run_dir)
    d_train, *_ = _read_corpus(run_dir, "dialogue")
    pool = listener_pool(d_train)
    prepared = pipeline.prepare_examples(d_train, tokenizer, pool,
                                         cfg.retrieval.past_pool_n,
                                         cfg.training.seed, label_source="gold")
    profiles = pipeline.estimate_profiles(suite["personality"], tokenizer, pool)
    from .optim import AdaptiveOptimizer
    cal = cfg.calibration
    opt = AdaptiveOptimizer(mgpe.parameters() + dec.parameters(),
                            lr=cal.lr, clip_norm=cfg.training.clip_norm)
    history = pipeline.run_generator_training(
        mgpe, dec, prepared, tokenizer, opt, cal.epochs, cfg.training.batch_size,
        cfg.training.seed + 500, beta=cal.beta, alpha=cal.alpha, k=cal.k,
        gamma=cal.gamma, max_new=cfg.decoding.max_new,
        personality_model=suite["personality"], target_profiles=profiles)
    _save_generator(run_dir, "calibrated", variant, mgpe, dec, history)
    print(f"calibrated [{variant}]: nll {history[-1]['nll']:.4f}, "
          f"ranking {history[-1]['l_p']:.4f}")
    return 0


def cmd_retrieve_index(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(args.run_dir)
    tokenizer = Tokenizer()
    d_train, *_ = _read_corpus(run_dir, "dialogue")
    embedders = pipeline.build_embedders(tokenizer, cfg.retrieval, cfg.training.seed)
    reports = pipeline.train_embedders(embedders, d_train, tokenizer, cfg.retrieval,
                                       cfg.training.seed)
    out = run_dir / "index"
    out.mkdir(parents=True, exist_ok=True)
    for name, model in embedders.items():
        checkpoint.save_model(out / f"{name}_embedder.ckpt", model)
    index = build_index(embedders, d_train, tokenizer)
    index.save(out / "index.ckpt", out / "index.json")
    pipeline.write_json(out / "training.json", reports)
    print(f"indexed {len(index)} responses into {out}")
    return 0


def _load_index(cfg, tokenizer, run_dir):
    embedders = pipeline.build_embedders(tokenizer, cfg.retrieval, cfg.training.seed)
    out = run_dir / "index"
    for name, model in embedders.items():
        checkpoint.load_model(out / f"{name}_embedder.ckpt", model)
    return embedders, RetrievalIndex.load(out / "index.ckpt", out / "index.json")


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(args.run_dir)
    tokenizer = Tokenizer()
    variant = args.variant or cfg.model.variant
    mgpe, dec = _load_generator(cfg, tokenizer, run_dir, args.stage, variant)
    suite = _load_suite(cfg, tokenizer, run_dir)
    d_train, *_ = _read_corpus(run_dir, "dialogue")
    pool = listener_pool(d_train)
    context = args.context
    if context is None:
        context = sys.stdin.read().strip()

    if args.use_index:
        embedders, index = _load_index(cfg, tokenizer, run_dir)
        _, _, entry = retrieve(embedders, index, context, tokenizer, k=1)[0]
        listener_id, exemplar_text = entry["listener_id"], entry["response"]
    else:
        if not args.listener:
            print("generate: need --listener unless --use-index is given",
                  file=sys.stderr)
            return 2
        listener_id = args.listener
        exemplar_text = args.exemplar
    if listener_id not in pool:
        print(f"generate: unknown listener {listener_id!r}", file=sys.stderr)
        return 2

    rng = np.random.default_rng([cfg.training.seed, 90])
    from .retrieval import sample_past_responses
    past = sample_past_responses(pool, listener_id, cfg.retrieval.past_pool_n, rng,
                                 exclude=exemplar_text)
    past_ids = tokenizer.encode(" <sep> ".join(past) if past else tokenizer.SEP)
    exemplar_ids = None
    if exemplar_text:
        rid = tokenizer.encode(exemplar_text)
        exemplar_ids = rid + [tokenizer.sep_id] + tokenizer.control_ids(
            classify_empathy(suite, rid), predict_emotion(suite, rid))
    if "E" in variant and exemplar_ids is None:
        print(f"generate: variant {variant} needs an exemplar "
              "(--exemplar or --use-index)", file=sys.stderr)
        return 2

    with ad.no_grad():
        prefix = mgpe.build_prefix(tokenizer.encode(context), past_ids, exemplar_ids)
    if args.sampler == "nucleus":
        ids = nucleus_sample(dec, prefix, [tokenizer.sep_id], tokenizer.eos_id, rng,
                             cfg.decoding.max_new, cfg.decoding.top_p,
                             cfg.decoding.temperature)
        candidates = [ids]
    else:
        gamma = cfg.calibration.gamma if args.sampler == "diverse" else 0.0
        groups = None if args.sampler == "diverse" else 1
        cset = diverse_beam_search(dec, prefix, [tokenizer.sep_id], tokenizer.eos_id,
                                   cfg.decoding.beam_size, cfg.decoding.max_new,
                                   groups=groups, gamma=gamma)
        candidates = [list(c.tokens) for c in cset]
    if args.pr and len(candidates) > 1:
        profiles = pipeline.estimate_profiles(suite["personality"], tokenizer, pool)
        order, _ = calibration.rank_by_profile(candidates, suite["personality"],
                                               profiles[listener_id])
        chosen = candidates[order[0]]
    else:
        chosen = candidates[0]
    payload = {"context": context, "listener_id": listener_id,
               "exemplar": exemplar_text, "response": tokenizer.decode(chosen),
               "candidates": [tokenizer.decode(c) for c in candidates]}
    import json
    print(json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(args.run_dir)
    tokenizer = Tokenizer()
    variant = args.variant or cfg.model.variant
    mgpe, dec = _load_generator(cfg, tokenizer, run_dir, args.stage, variant)
    suite = _load_suite(cfg, tokenizer, run_dir)
    prepared, profiles, _ = _prepared_eval(cfg, tokenizer, run_dir, suite, args.split)
    gamma = cfg.calibration.gamma
    use_pr = args.pr
    report = pipeline.evaluate_generation(
        mgpe, dec, suite, prepared, tokenizer, cfg.decoding.beam_size, gamma,
        cfg.decoding.max_new, use_pr, profiles)
    out = run_dir / "eval"
    out.mkdir(parents=True, exist_ok=True)
    name = f"report_{args.stage}_{variant.replace('+', '')}_" \
           f"{'pr' if use_pr else 'nopr'}_{args.split}.json"
    pipeline.write_json(out / name, report)
    print(f"{args.stage} [{variant}] pr={use_pr} on {args.split}: "
          f"EI={report['EI']} T={report['T']} EAcc={report['EAcc']} "
          f"IPEX={report['IPEX']} Intent={report['Intent']} "
          f"d1={report['distinct1']:.3f} d2={report['distinct2']:.3f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    run_dir = _run_dir(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.ini")
    seeds = [int(s) for s in args.seeds.split(",")]
    table = pipeline.ablate(cfg, seeds)
    pipeline.write_json(run_dir / "ablation.json", table)
    fmt = "{:<8} {:<10} {:>8} {:>8} {:>8} {:>8} {:>8}"
    print(fmt.format("variant", "reinforced", "EI", "T", "EAcc", "IPEX", "Intent"))
    for row in table["rows"]:
        def cell(v):
            return "-" if v is None else f"{v:.3f}"
        print(fmt.format(row["variant"], str(row["reinforced"]),
                         cell(row["median_EI"]), cell(row["median_T"]),
                         cell(row["median_EAcc"]), cell(row["median_IPEX"]),
                         cell(row["median_Intent"])))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_cfg(args)
    tokenizer = Tokenizer()
    rng = np.random.default_rng(cfg.training.seed)
    with ad.precision("float64"):
        mgpe, dec = pipeline.build_generator(tokenizer, cfg.model, cfg.training.seed)
        ctx = list(rng.integers(4, tokenizer.vocab_size, size=10))
        past = list(rng.integers(4, tokenizer.vocab_size, size=8))
        exem = list(rng.integers(4, tokenizer.vocab_size, size=8))
        resp = list(rng.integers(4, tokenizer.vocab_size, size=6))
        from .decoder import teacher_forcing_io
        inp, tgt = teacher_forcing_io(tokenizer.sep_id, tokenizer.eos_id, resp)

        def loss():
            return dec.nll(mgpe.build_prefix(ctx, past, exem), inp, tgt)

        params = mgpe.parameters() + dec.parameters()
        err = ad.grad_check(loss, params, max_per_param=args.max_per_param,
                            rng=np.random.default_rng(cfg.training.seed + 1))
    n = sum(p.data.size for p in params)
    ok = err <= args.tolerance
    print(f"gradcheck over {len(params)} tensors ({n} parameters, "
          f"<= {args.max_per_param}/tensor probed): max rel err {err:.3e} "
          f"{'<=' if ok else '>'} {args.tolerance:g} -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(sub, run_dir: bool = True):
    if run_dir:
        sub.add_argument("--run-dir", required=True,
                         help="artifact directory (relative paths resolve under "
                              "EMPERSONA_RUNS or ./runs)")
    sub.add_argument("--config", help="INI config file; defaults to the run "
                                      "directory's snapshot when present")
    sub.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                     help="override one config value (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="empersona",
        description="Personality-consistent empathetic response generation "
                    "on synthetic dialogues.")
    sp = ap.add_subparsers(dest="command", required=True)

    s = sp.add_parser("corpus-gen", help="generate the synthetic corpora")
    _add_common(s)
    s.set_defaults(fn=cmd_corpus_gen)

    s = sp.add_parser("train-predictors", help="train the response predictors")
    _add_common(s)
    s.set_defaults(fn=cmd_train_predictors)

    s = sp.add_parser("train-generator", help="train the base generator (NLL only)")
    _add_common(s)
    s.add_argument("--variant", choices=["C", "C+P", "C+E", "C+E+P"],
                   help="prefix variant (default: config)")
    s.set_defaults(fn=cmd_train_generator)

    s = sp.add_parser("calibrate", help="personality-reinforcement training stage")
    _add_common(s)
    s.add_argument("--variant", choices=["C", "C+P", "C+E", "C+E+P"])
    s.set_defaults(fn=cmd_calibrate)

    s = sp.add_parser("retrieve-index", help="train embedders and build the "
                                             "response retrieval index")
    _add_common(s)
    s.set_defaults(fn=cmd_retrieve_index)

    s = sp.add_parser("generate", help="generate a response for one context")
    _add_common(s)
    s.add_argument("--context", help="speaker context (default: read stdin)")
    s.add_argument("--listener", help="listener id, e.g. L003")
    s.add_argument("--exemplar", help="exemplar response text for the prefix")
    s.add_argument("--use-index", action="store_true",
                   help="retrieve listener and exemplar from the index")
    s.add_argument("--stage", choices=["generator", "calibrated"],
                   default="calibrated")
    s.add_argument("--variant", choices=["C", "C+P", "C+E", "C+E+P"])
    s.add_argument("--sampler", choices=["beam", "diverse", "nucleus"],
                   default="diverse")
    s.add_argument("--pr", action=argparse.BooleanOptionalAction, default=True,
                   help="pick the candidate closest to the listener profile")
    s.set_defaults(fn=cmd_generate)

    s = sp.add_parser("evaluate", help="style and empathy evaluation report")
    _add_common(s)
    s.add_argument("--stage", choices=["generator", "calibrated"],
                   default="calibrated")
    s.add_argument("--variant", choices=["C", "C+P", "C+E", "C+E+P"])
    s.add_argument("--split", choices=["val", "test"], default="test")
    s.add_argument("--pr", action=argparse.BooleanOptionalAction, default=True)
    s.set_defaults(fn=cmd_evaluate)

    s = sp.add_parser("ablate", help="prefix-variant sweep with and without "
                                     "personality reinforcement")
    _add_common(s)
    s.add_argument("--seeds", default="0", help="comma-separated seeds")
    s.set_defaults(fn=cmd_ablate)

    s = sp.add_parser("gradcheck", help="finite-difference check of the full "
                                        "generator gradient")
    _add_common(s, run_dir=False)
    s.add_argument("--max-per-param", type=int, default=3)
    s.add_argument("--tolerance", type=float, default=1e-5)
    s.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
