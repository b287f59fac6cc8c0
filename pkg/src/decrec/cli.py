"""Command-line front end: prepare, train, evaluate, compare, synth.

Every command resolves one configuration (file plus ``--set`` overrides),
derives a content-addressed run directory from it, and writes a config
snapshot next to its outputs. Exit codes: 0 success, 1 runtime failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import checkpoint, corpus, evalx, pipeline, synthetic
from .config import ConfigError, RunConfig, load_run_config, run_id, write_snapshot
from .inference import rank_users
from .training import TrainConfig, build_model, train, write_training_log


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr, batch_size=cfg.batch_size, l2=cfg.l2, dropout=cfg.dropout,
        epochs=cfg.epochs, patience=cfg.patience, neg_ratio=cfg.neg_ratio,
        dim=cfg.dim, seed=cfg.seed,
    )


def _synthetic_config(cfg: RunConfig) -> synthetic.SyntheticConfig:
    train_pref = np.asarray(cfg.train_pref, dtype=np.float64)
    test_user = np.tile(train_pref, (cfg.n_users, 1))
    if cfg.test_pref is not None:
        n_drift = int(np.ceil(cfg.drift_fraction * cfg.n_users))
        test_user[:n_drift] = np.asarray(cfg.test_pref, dtype=np.float64)
    return synthetic.SyntheticConfig(
        n_users=cfg.n_users, n_items=cfg.n_items, n_groups=cfg.n_groups,
        interactions_per_user=cfg.interactions_per_user,
        train_pref=train_pref, test_pref=test_user,
        drift_start=cfg.drift_start, quality_sigma=cfg.quality_sigma,
        quality_mode=cfg.quality_mode, seed=cfg.seed,
    )


def _run_dir(cfg: RunConfig) -> str:
    d = os.path.join(cfg.out, run_id(cfg))
    os.makedirs(d, exist_ok=True)
    write_snapshot(os.path.join(d, "config.json"), cfg)
    return d


def _load_raw(cfg: RunConfig):
    if cfg.synthetic:
        data = synthetic.synthesize_dataset(_synthetic_config(cfg))
        tags = {data.interactions.item_ids[i]: t for i, t in enumerate(data.tags_per_item)}
        return data.interactions, tags, data.groups
    if not os.path.exists(cfg.interactions):
        raise FileNotFoundError(f"interactions file not found: {cfg.interactions}")
    if not os.path.exists(cfg.item_groups):
        raise FileNotFoundError(f"item metadata file not found: {cfg.item_groups}")
    iset = corpus.load_interactions(cfg.interactions, cfg.delimiter, cfg.header)
    tags = corpus.read_item_tag_map(cfg.item_groups)
    return iset, tags, None


def cmd_synth(cfg: RunConfig) -> int:
    run = _run_dir(cfg)
    data = synthetic.synthesize_dataset(_synthetic_config(cfg))
    synthetic.write_raw_files(
        data,
        os.path.join(run, "interactions.tsv"),
        os.path.join(run, "item_groups.tsv"),
    )
    with open(os.path.join(run, "synth_truth.tsv"), "w", encoding="utf-8") as fh:
        fh.write("user\tdrifted\n")
        for u, flag in enumerate(data.drifted):
            fh.write(f"{u}\t{int(flag)}\n")
    print(f"synth: wrote raw files under {run}")
    return 0


def cmd_prepare(cfg: RunConfig) -> int:
    run = _run_dir(cfg)
    raw, tags, groups = _load_raw(cfg)
    prep = pipeline.prepare(
        raw, tags, k_core=cfg.k_core, threshold=cfg.threshold,
        ratios=tuple(cfg.ratios), alpha=cfg.alpha, groups=groups,
    )
    out = os.path.join(run, "prepared")
    pipeline.save_prepared(out, prep)
    print(f"prepare: {prep.meta['n_users']} users, {prep.meta['n_items']} items, "
          f"{prep.meta['n_interactions']} interactions -> {out}")
    return 0


def _prepared_dir(cfg: RunConfig, override: str | None) -> str:
    d = override or os.path.join(cfg.out, run_id(cfg), "prepared")
    if not os.path.isdir(d):
        raise FileNotFoundError(f"prepared dataset directory not found: {d}")
    return d


def cmd_train(cfg: RunConfig, prepared: str | None) -> int:
    run = _run_dir(cfg)
    prep = pipeline.load_prepared(_prepared_dir(cfg, prepared))
    tc = _train_config(cfg)
    ckpt_dir = os.path.join(run, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)

    jobs = []  # (name, train data, backdoor config or None)
    if cfg.variant in ("baseline", "unawareness"):
        jobs.append((cfg.variant, pipeline.build_train_data(prep, cfg.variant), None))
    else:
        operator = "element-product" if cfg.variant == "decrs-ep" else "fm-module"
        data = pipeline.build_train_data(prep, "baseline")
        jobs.append(("rs", data, None))
        jobs.append(("de", data, pipeline.backdoor_config(prep, operator)))

    for name, data, backdoor in jobs:
        model = build_model(cfg.model, data.schema, tc, backdoor)
        result = train(model, data, tc)
        path = os.path.join(ckpt_dir, f"{name}.ckpt")
        checkpoint.save_model(path, model, {
            "seed": cfg.seed, "config": json.dumps(vars(tc), sort_keys=True),
        })
        write_training_log(os.path.join(ckpt_dir, f"{name}_log.tsv"), result.log)
        print(f"train[{name}]: best val R@10 {result.best_metric:.4f} "
              f"at epoch {result.best_epoch} -> {path}")
    return 0


def _method_label(cfg: RunConfig, no_fusion: bool, calibration: float | None) -> str:
    if calibration is not None:
        return "Calibration"
    if cfg.variant in ("decrs-ep", "decrs-fm"):
        return "DecRS (w/o)" if no_fusion else "DecRS"
    if cfg.variant == "unawareness":
        return "Unawareness"
    return cfg.model.upper()


def cmd_evaluate(cfg: RunConfig, prepared: str | None, checkpoints: str | None,
                 no_fusion: bool, calibration: float | None) -> int:
    run = _run_dir(cfg)
    prep = pipeline.load_prepared(_prepared_dir(cfg, prepared))
    ckpt_dir = checkpoints or os.path.join(run, "checkpoints")
    data = pipeline.build_train_data(
        prep, "baseline" if cfg.variant.startswith("decrs") else cfg.variant)
    ctx = pipeline.ranking_context(data)

    def load(name):
        path = os.path.join(ckpt_dir, f"{name}.ckpt")
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing checkpoint: {path}")
        return checkpoint.load_model(path)

    users, relevant = pipeline.test_targets(prep)
    k_list = [int(k) for k in cfg.k_list]
    k_rank = max(k_list + [20])
    if cfg.variant in ("decrs-ep", "decrs-fm"):
        model_for_scores = de = load("de")
        if no_fusion:
            ranked = rank_users(users, (de,), None, prep.split.interacted, k_rank, ctx)
        else:
            rs = load("rs")
            ranked = rank_users(users, (rs, de), prep.drift.eta_hat,
                                prep.split.interacted, k_rank, ctx)
    else:
        model_for_scores = model = load(cfg.variant)
        ranked = rank_users(users, (model,), None, prep.split.interacted, k_rank, ctx)

    hist = pipeline.history_distributions(prep, users)
    if calibration is not None:
        reranked = []
        item_range = np.arange(ctx.n_items)
        for lo in range(0, users.size, 256):
            chunk = users[lo:lo + 256]
            mats = model_for_scores.score_users(chunk, ctx.user_arr, ctx.item_arr)
            for row, u in enumerate(chunk):
                mask = np.ones(ctx.n_items, dtype=bool)
                mask[prep.split.interacted[u]] = False
                rl = evalx.calibration_rerank(
                    item_range[mask], mats[row][mask], hist[int(u)],
                    prep.membership, calibration, k_rank)
                rl.user_id = int(u)
                reranked.append(rl)
        ranked = reranked

    relevant_by_user = {int(u): rel for u, rel in zip(users, relevant)}
    eta_by_user = {int(u): float(prep.drift.eta[u]) for u in users}
    report = evalx.evaluate_rankings(
        ranked, relevant_by_user, hist, prep.membership, eta_by_user, tuple(k_list))
    label = _method_label(cfg, no_fusion, calibration)
    report.meta = {
        "method": label, "model": cfg.model, "variant": cfg.variant,
        "alpha": cfg.alpha, "run_id": run_id(cfg),
    }
    reports_dir = os.path.join(run, "reports")
    evalx.write_report(reports_dir, report, label.replace(" ", "_").replace("/", "-"))
    from .inference import write_rankings

    write_rankings(os.path.join(reports_dir, "ranking.tsv"), ranked)
    cols = ", ".join(f"{m}={report.summary[m]:.4f}"
                     for m in sorted(report.summary) if m != "n_users")
    print(f"evaluate[{label}]: {report.summary['n_users']} users; {cols}")
    return 0


def _find_summary(path) -> str:
    if os.path.isfile(path):
        return path
    hits = sorted(glob.glob(os.path.join(path, "**", "*_summary.json"), recursive=True))
    if len(hits) != 1:
        raise RuntimeError(
            f"{path}: expected exactly one *_summary.json under it, found {len(hits)}")
    return hits[0]


def cmd_compare(path_a: str, path_b: str, out_path: str | None) -> int:
    a = evalx.read_summary(_find_summary(path_a))
    b = evalx.read_summary(_find_summary(path_b))
    metrics = [m for m in sorted(a["summary"]) if m != "n_users"]
    missing = [m for m in metrics if m not in b["summary"]] + \
              [m for m in sorted(b["summary"]) if m != "n_users" and m not in a["summary"]]
    if missing:
        raise RuntimeError(f"metric columns missing from one report: {sorted(set(missing))}")
    lines = ["metric\ta\tb\trel_improv_pct"]
    for m in metrics:
        va, vb = a["summary"][m], b["summary"][m]
        rel = (vb - va) / va * 100.0 if va != 0 else float("nan")
        lines.append(f"{m}\t{va:.6g}\t{vb:.6g}\t{rel:+.2f}%")
    text = "\n".join(lines) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decrec",
        description="Deconfounded recommender pipeline: prepare, train, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration key")

    for name in ("synth", "prepare"):
        add_common(sub.add_parser(name))
    p_train = sub.add_parser("train")
    add_common(p_train)
    p_train.add_argument("--prepared", help="reuse an existing prepared directory")
    p_eval = sub.add_parser("evaluate")
    add_common(p_eval)
    p_eval.add_argument("--prepared")
    p_eval.add_argument("--checkpoints", help="directory holding the trained checkpoints")
    p_eval.add_argument("--no-fusion", action="store_true",
                        help="rank by the deconfounded model alone")
    p_eval.add_argument("--calibration", type=float, default=None, metavar="LAMBDA",
                        help="apply calibration re-ranking with this weight")
    p_cmp = sub.add_parser("compare")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    p_cmp.add_argument("--out", dest="out_path", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            return cmd_compare(args.report_a, args.report_b, args.out_path)
        cfg = load_run_config(args.config, args.set)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.prepared)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.prepared, args.checkpoints,
                                args.no_fusion, args.calibration)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, FileNotFoundError, corpus.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
