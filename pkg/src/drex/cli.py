"""Command line entry point: ``drex <verb> [options]``.

Exit status is 0 on success, 1 on internal or numerical failure and 2 on
usage or input errors. Every verb writes ``run_manifest.json`` next to its
artifacts with the effective config, seeds and SHA-256 checksums of inputs
and outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, load_config
from .core.adam import TrainingError
from .explain import explain, read_profiles, write_profiles
from .ingest import BundleFormatError, EmptyCorpusError, ingest, load_bundle, save_bundle
from .kernels import BACKEND
from .text import EmbeddingFormatError, load_stopwords

log = logging.getLogger("drex")

BUNDLE_FILE = "bundle.drxb"
CHECKPOINT_FILE = "checkpoint.drxm"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_manifest(out: Path, verb: str, config: dict, seeds: dict, inputs, artifacts) -> None:
    manifest = {
        "verb": verb,
        "version": __version__,
        "kernel": BACKEND,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256(p) for p in inputs if p and Path(p).is_file()},
        "artifacts": {Path(p).name: sha256(p) for p in artifacts},
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", "utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _overrides(args):
    pairs = []
    for item in args.set or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    if args.seed is not None:
        pairs.append(("seed", str(args.seed)))
    if args.threads is not None:
        pairs.append(("threads", str(args.threads)))
    return pairs


def _config(args) -> TrainConfig:
    if args.config and not Path(args.config).is_file():
        raise UsageError(f"config not found: {args.config}")
    cfg = load_config(args.config, _overrides(args))
    return _eval_flags(cfg, args)


def _eval_flags(cfg: TrainConfig, args) -> TrainConfig:
    for flag, key in (("normalization", "normalization"), ("relevance_threshold", "relevance_threshold"),
                      ("scope", "scope")):
        val = getattr(args, flag, None)
        if val is not None:
            cfg = replace(cfg, **{key: val})
    return cfg


def _bundle(path):
    if not path:
        raise UsageError("--bundle is required")
    if not Path(path).is_file():
        raise UsageError(f"bundle not found: {path}")
    return load_bundle(path)


def _checkpoint(path):
    if not path:
        raise UsageError("checkpoint not found (pass --checkpoint)")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _provider(cfg):
    from .train import make_provider
    return make_provider(cfg)


# ---------------------------------------------------------------------------
# verbs


def cmd_ingest(args) -> int:
    if not Path(args.input).is_file():
        raise UsageError(f"corpus not found: {args.input}")
    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    stop = load_stopwords(args.stopwords) if args.stopwords else None
    bundle, summary = ingest(args.input, seed, scale=args.rating_scale,
                             min_user_ratings=args.min_user_ratings, min_item_raters=args.min_item_raters,
                             iterate=args.kcore_iterate, stopwords=stop)
    save_bundle(bundle, out / BUNDLE_FILE)
    info = dict(summary.__dict__, sparsity=summary.sparsity)
    (out / "ingest_summary.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n", "utf-8")
    write_manifest(out, "ingest", {"rating_scale": args.rating_scale, "min_user_ratings": args.min_user_ratings,
                                   "min_item_raters": args.min_item_raters, "kcore_iterate": args.kcore_iterate},
                   {"split": seed}, [args.input, args.stopwords],
                   [out / BUNDLE_FILE, out / "ingest_summary.json"])
    print(f"{summary.after_filter} interactions, {summary.users} users, {summary.items} items -> {out / BUNDLE_FILE}")
    return 0


def cmd_train(args) -> int:
    from .train import EpochStats, Trainer

    cfg = _config(args)
    bundle = _bundle(args.bundle)
    out = _out_dir(args)
    params = states = None
    if args.resume:
        ck = _checkpoint(args.resume)
        params, states = ck.params, ck.states
    provider = _provider(cfg)
    trainer = Trainer(bundle, cfg, provider, params=params, states=states)
    res = trainer.fit()
    model = res.model
    save_checkpoint(out / CHECKPOINT_FILE, model.params, model.states, trainer.cfg, res.best_epoch)
    write_csv(out / "history.csv", EpochStats.HEADER[:-1], [h.row(with_time=False) for h in res.history])
    timings = {"epochs": [[h.epoch, h.wall_time] for h in res.history]}
    (out / "timings.json").write_text(json.dumps(timings) + "\n", "utf-8")
    artifacts = [out / CHECKPOINT_FILE, out / "history.csv"]
    if res.profiles is not None:
        write_profiles(res.profiles, out / "profiles.jsonl",
                       {"user": bundle.user_ids, "item": bundle.item_ids})
        artifacts.append(out / "profiles.jsonl")
    write_manifest(out, "train", dict(trainer.cfg.to_pairs()), {"seed": cfg.seed, "split": bundle.split_seed},
                   [args.bundle, args.config, cfg.embedder_path if cfg.embedder_kind == "file_table" else None,
                    args.resume], artifacts)
    print(f"trained {len(res.history)} epochs, best epoch {res.best_epoch}"
          f"{' (early stop)' if res.stopped_early else ''} -> {out / CHECKPOINT_FILE}")
    return 0


def _load_model(args):
    from .train import Recommender

    ck = _checkpoint(args.checkpoint)
    cfg = _eval_flags(ck.config.with_overrides(_overrides(args)), args)
    bundle = _bundle(args.bundle)
    model = Recommender(ck.params, ck.states, _provider(cfg), bundle.vocab, cfg)
    return ck, cfg, bundle, model


def cmd_evaluate(args) -> int:
    ck, cfg, bundle, model = _load_model(args)
    out = _out_dir(args)
    rep = model.report(bundle, args.split)
    write_csv(out / "metrics.csv", rep.columns(), [rep.row()])
    info = rep.to_dict()
    info["meta"] = {"split": args.split, "checkpoint_epoch": ck.epoch}
    (out / "report.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n", "utf-8")
    write_manifest(out, "evaluate", dict(cfg.to_pairs()), {"seed": cfg.seed, "split": bundle.split_seed},
                   [args.checkpoint, args.bundle], [out / "metrics.csv", out / "report.json"])
    print(f"MAE {rep.mae:.4f}  F1@5 {rep.f1[5]:.4f}  NDCG@5 {rep.ndcg[5]:.4f}  ({rep.n_users} users)")
    return 0


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def cmd_sweep(args) -> int:
    from .train import D_GRID, LAMBDA_GRID, LR_GRID, sweep

    cfg = _config(args)
    bundle = _bundle(args.bundle)
    out = _out_dir(args)
    lrs = _floats(args.lr) if args.lr else LR_GRID
    lams = _floats(args.lam) if args.lam else LAMBDA_GRID
    ds = tuple(int(x) for x in _floats(args.d)) if args.d else D_GRID
    if not (lrs and lams and ds):
        raise UsageError("sweep grids must be non-empty")
    res = sweep(bundle, cfg, lrs, lams, ds, runs=args.runs, provider=_provider(cfg), split=args.split)
    write_csv(out / "sweep.csv", ("lr", "lambda", "d", "s"),
              [(r["lr"], r["lambda"], r["d"], r["s"]) for r in res.table])
    ks = range(1, 6)
    rows = []
    for (lr, lam, d), reps in res.runs.items():
        for j, rep in enumerate(reps):
            rows.append([lr, lam, d, cfg.seed + j, rep.mae] + [rep.f1[k] for k in ks] + [rep.ndcg[k] for k in ks])
    write_csv(out / "sweep_runs.csv", ["lr", "lambda", "d", "seed", "mae"] + [f"F1@{k}" for k in ks]
              + [f"NDCG@{k}" for k in ks], rows)
    w = res.winner
    winner = replace(cfg, lr=w["lr"], lam=w["lambda"], d=w["d"])
    (out / "winner.cfg").write_text(winner.dumps(), "utf-8")
    write_manifest(out, "sweep", dict(cfg.to_pairs()), {"seeds": [cfg.seed + j for j in range(args.runs)]},
                   [args.bundle, args.config], [out / "sweep.csv", out / "sweep_runs.csv", out / "winner.cfg"])
    print(f"winner lr={w['lr']} lambda={w['lambda']} d={w['d']} s={w['s']:.4f}")
    return 0


def cmd_explain(args) -> int:
    ck, cfg, bundle, model = _load_model(args)
    if not args.profiles or not Path(args.profiles).is_file():
        raise UsageError(f"profiles not found: {args.profiles}")
    store = read_profiles(args.profiles)
    out = _out_dir(args)
    if args.user is not None:
        if args.user not in bundle.user_ids:
            raise UsageError(f"unknown user {args.user!r}")
        users = [bundle.user_ids.index(args.user)]
    else:
        users = sorted({it.user_idx for it in bundle.test})
    seen = {}
    for it in bundle.train:
        seen.setdefault(it.user_idx, set()).add(it.item_idx)
    with open(out / "explanations.jsonl", "w", encoding="utf-8") as fh:
        for u in users:
            cands = [i for i in range(bundle.n_items) if i not in seen.get(u, ())]
            scores = {i: model.predict(u, i) for i in cands}
            top = sorted(cands, key=lambda i: (-scores[i], i))[:args.top_n]
            for rank, i in enumerate(top, start=1):
                ex = explain(store.user(u), store.item(i), float(np.clip(scores[i], 1, cfg.rating_scale)))
                fh.write(json.dumps({"user": bundle.user_ids[u], "item": bundle.item_ids[i], "rank": rank,
                                     "predicted": ex.predicted, "keywords": ex.shared,
                                     "scores": ex.combined, "keyword_free": ex.keyword_free},
                                    sort_keys=True) + "\n")
    write_manifest(out, "explain", dict(cfg.to_pairs()), {"seed": cfg.seed},
                   [args.checkpoint, args.bundle, args.profiles], [out / "explanations.jsonl"])
    print(f"explained top-{args.top_n} items for {len(users)} users -> {out / 'explanations.jsonl'}")
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import TOLERANCE, run_gradchecks

    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    results = run_gradchecks(seed)
    write_csv(out / "gradcheck.csv", ("check", "max_rel_error", "ok"),
              [(n, e, int(e < TOLERANCE)) for n, e in results])
    write_manifest(out, "gradcheck", {"h": 1e-5, "tolerance": TOLERANCE}, {"seed": seed}, [],
                   [out / "gradcheck.csv"])
    bad = [n for n, e in results if not e < TOLERANCE]
    for n, e in results:
        print(f"{n:<20s} {e:.3e} {'ok' if e < TOLERANCE else 'FAIL'}")
    if bad:
        print(f"gradcheck failed: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate, write_dataset

    out = _out_dir(args)
    seed = 0 if args.seed is None else args.seed
    spec = SynthSpec(n_users=args.users, n_items=args.items, per_user=args.per_user,
                     review_drop=args.review_drop)
    if spec.per_user > spec.n_items:
        raise UsageError("--per-user cannot exceed --items")
    records, manifest, mapping = generate(spec, seed)
    paths = write_dataset(out, records, manifest, mapping)
    write_manifest(out, "synth", manifest["spec"], {"seed": seed}, [], list(paths.values()))
    print(f"{len(records)} interactions -> {paths['corpus']}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--threads", type=int, help="worker threads (1 = deterministic)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("-v", "--verbose", action="store_true")

    evalopts = argparse.ArgumentParser(add_help=False)
    evalopts.add_argument("--normalization", choices=("capped", "paper_literal"))
    evalopts.add_argument("--relevance-threshold", type=float)
    evalopts.add_argument("--scope", choices=("test_items", "full_catalog"))

    p = argparse.ArgumentParser(prog="drex", description="Explainable multimodal recommender")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    s = sub.add_parser("ingest", parents=[common], help="parse, filter and split a review corpus")
    s.add_argument("input", help="JSON-lines corpus")
    s.add_argument("--rating-scale", type=int, default=5)
    s.add_argument("--min-user-ratings", type=int, default=20)
    s.add_argument("--min-item-raters", type=int, default=5)
    s.add_argument("--kcore-iterate", action="store_true", help="repeat filtering to a fixed point")
    s.add_argument("--stopwords", help="stopword list replacing the built-in one")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", parents=[common, evalopts], help="train and checkpoint a model")
    s.add_argument("--bundle", required=True)
    s.add_argument("--resume", help="start from this checkpoint's parameters and states")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common, evalopts], help="metrics for a checkpoint")
    s.add_argument("--bundle", required=True)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--split", choices=("test", "validation"), default="test")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", parents=[common, evalopts], help="grid search over lr, lambda, d")
    s.add_argument("--bundle", required=True)
    s.add_argument("--lr", help="comma-separated learning rates")
    s.add_argument("--lambda", dest="lam", help="comma-separated regularisation weights")
    s.add_argument("--d", help="comma-separated state sizes")
    s.add_argument("--runs", type=int, default=3)
    s.add_argument("--split", choices=("test", "validation"), default="test")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("explain", parents=[common, evalopts], help="keyword explanations for recommendations")
    s.add_argument("--bundle", required=True)
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--profiles", required=True)
    s.add_argument("--user", help="external user id (default: every test user)")
    s.add_argument("--top-n", type=int, default=5)
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", parents=[common], help="synthetic corpus with planted keywords")
    s.add_argument("--users", type=int, default=200)
    s.add_argument("--items", type=int, default=300)
    s.add_argument("--per-user", type=int, default=40)
    s.add_argument("--review-drop", type=float, default=0.0, help="fraction of reviews blanked")
    s.set_defaults(func=cmd_synth)
    return p


USAGE_ERRORS = (UsageError, ConfigError, BundleFormatError, EmbeddingFormatError, EmptyCorpusError,
                FileNotFoundError, json.JSONDecodeError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"drex: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, FloatingPointError) as exc:
        print(f"drex: numerical failure: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"drex: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
