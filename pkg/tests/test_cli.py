import json
import os

import numpy as np
import pytest

from decrec.cli import main


def write_config(path, out_dir, **overrides):
    base = {
        "synthetic": "true",
        "n_users": 24,
        "n_items": 16,
        "n_groups": 2,
        "interactions_per_user": 30,
        "train_pref": "[0.7, 0.3]",
        "test_pref": "[0.5, 0.5]",
        "drift_fraction": 0.5,
        "drift_start": 0.4,
        "quality_sigma": 0.4,
        "k_core": 1,
        "model": '"fm"',
        "variant": '"baseline"',
        "dim": 4,
        "lr": 0.05,
        "batch_size": 64,
        "epochs": 3,
        "patience": 10,
        "alpha": 0.3,
        "seed": 7,
        "out": json.dumps(str(out_dir)),
    }
    base.update(overrides)
    path.write_text("".join(f"{k} = {v}\n" for k, v in base.items()))


def run_dir_of(out_dir):
    entries = [d for d in os.listdir(out_dir) if os.path.isdir(os.path.join(out_dir, d))]
    assert len(entries) >= 1
    return os.path.join(out_dir, entries[0])


def test_full_pipeline_baseline_and_decrs(tmp_path):
    cfg = tmp_path / "run.conf"
    out = tmp_path / "runs"
    write_config(cfg, out)
    assert main(["prepare", "--config", str(cfg)]) == 0
    run = run_dir_of(out)
    prepared = os.path.join(run, "prepared")
    for name in ("meta.json", "interactions_train.tsv", "interactions_validation.tsv",
                 "interactions_test.tsv", "users.tsv", "items.tsv", "groups.tsv",
                 "item_groups.tsv", "dbar.tsv", "drift.tsv"):
        assert os.path.exists(os.path.join(prepared, name)), name
    assert os.path.exists(os.path.join(run, "config.json"))

    assert main(["train", "--config", str(cfg)]) == 0
    assert os.path.exists(os.path.join(run, "checkpoints", "baseline.ckpt"))
    assert os.path.exists(os.path.join(run, "checkpoints", "baseline_log.tsv"))

    assert main(["evaluate", "--config", str(cfg)]) == 0
    reports = os.path.join(run, "reports")
    summaries = [f for f in os.listdir(reports) if f.endswith("_summary.json")]
    assert summaries == ["FM_summary.json"]
    with open(os.path.join(reports, "FM_summary.json")) as fh:
        summary = json.load(fh)["summary"]
    assert {"recall@10", "recall@20", "ndcg@10", "ndcg@20", "c_kl", "n_users"} <= set(summary)

    # decrs variant: trains the pair and supports the no-fusion ablation
    cfg2 = tmp_path / "run2.conf"
    write_config(cfg2, out, variant='"decrs-fm"')
    assert main(["prepare", "--config", str(cfg2)]) == 0
    assert main(["train", "--config", str(cfg2)]) == 0
    run2 = [os.path.join(out, d) for d in os.listdir(out)
            if os.path.isdir(os.path.join(out, d, "checkpoints"))
            and os.path.exists(os.path.join(out, d, "checkpoints", "de.ckpt"))][0]
    assert os.path.exists(os.path.join(run2, "checkpoints", "rs.ckpt"))
    assert main(["evaluate", "--config", str(cfg2)]) == 0
    assert os.path.exists(os.path.join(run2, "reports", "DecRS_summary.json"))
    assert main(["evaluate", "--config", str(cfg2), "--no-fusion"]) == 0
    assert os.path.exists(os.path.join(run2, "reports", "DecRS_(w-o)_summary.json"))
    with open(os.path.join(run2, "reports", "DecRS_(w-o)_summary.json")) as fh:
        assert json.load(fh)["meta"]["method"] == "DecRS (w/o)"

    # compare the two summaries
    out_cmp = tmp_path / "cmp.tsv"
    code = main(["compare", os.path.join(run, "reports", "FM_summary.json"),
                 os.path.join(run2, "reports", "DecRS_summary.json"),
                 "--out", str(out_cmp)])
    assert code == 0
    lines = out_cmp.read_text().splitlines()
    assert lines[0] == "metric\ta\tb\trel_improv_pct"
    assert len(lines) == 6  # five metrics


def test_compare_identical_runs_zero(tmp_path):
    cfg = tmp_path / "run.conf"
    out = tmp_path / "runs"
    write_config(cfg, out)
    main(["prepare", "--config", str(cfg)])
    main(["train", "--config", str(cfg)])
    main(["evaluate", "--config", str(cfg)])
    run = run_dir_of(out)
    summary = os.path.join(run, "reports", "FM_summary.json")
    out_cmp = tmp_path / "cmp.tsv"
    assert main(["compare", summary, summary, "--out", str(out_cmp)]) == 0
    for line in out_cmp.read_text().splitlines()[1:]:
        assert line.endswith("+0.00%")


def test_compare_relative_improvement_value(capsys, tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text(json.dumps({"summary": {"recall@20": 0.1162, "n_users": 10}}))
    b.write_text(json.dumps({"summary": {"recall@20": 0.1231, "n_users": 10}}))
    assert main(["compare", str(a), str(b)]) == 0
    out = capsys.readouterr().out
    assert "+5.94%" in out


def test_compare_metric_mismatch_errors(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text(json.dumps({"summary": {"recall@20": 0.1, "n_users": 1}}))
    b.write_text(json.dumps({"summary": {"ndcg@20": 0.1, "n_users": 1}}))
    assert main(["compare", str(a), str(b)]) == 1


def test_synth_writes_raw_files(tmp_path):
    cfg = tmp_path / "run.conf"
    out = tmp_path / "runs"
    write_config(cfg, out)
    assert main(["synth", "--config", str(cfg)]) == 0
    run = run_dir_of(out)
    assert os.path.exists(os.path.join(run, "interactions.tsv"))
    assert os.path.exists(os.path.join(run, "item_groups.tsv"))
    assert os.path.exists(os.path.join(run, "synth_truth.tsv"))


def test_prepare_rerun_byte_identical(tmp_path):
    cfg = tmp_path / "run.conf"
    out = tmp_path / "runs"
    write_config(cfg, out)
    assert main(["prepare", "--config", str(cfg)]) == 0
    run = run_dir_of(out)
    prepared = os.path.join(run, "prepared")
    first = {f: open(os.path.join(prepared, f), "rb").read() for f in os.listdir(prepared)}
    assert main(["prepare", "--config", str(cfg)]) == 0
    second = {f: open(os.path.join(prepared, f), "rb").read() for f in os.listdir(prepared)}
    assert first == second


def test_missing_metadata_file_exit_2(tmp_path):
    cfg = tmp_path / "run.conf"
    cfg.write_text(
        f'interactions = "{tmp_path}/missing.tsv"\n'
        f'item_groups = "{tmp_path}/missing_groups.tsv"\n'
        f'out = "{tmp_path}/runs"\n'
    )
    assert main(["prepare", "--config", str(cfg)]) == 2


def test_invalid_config_value_exit_2(tmp_path):
    cfg = tmp_path / "run.conf"
    out = tmp_path / "runs"
    write_config(cfg, out, lr="-0.5")
    assert main(["prepare", "--config", str(cfg)]) == 2


def test_unknown_config_key_exit_2(tmp_path):
    cfg = tmp_path / "run.conf"
    out = tmp_path / "runs"
    write_config(cfg, out)
    assert main(["prepare", "--config", str(cfg), "--set", "nonsense=1"]) == 2


def test_missing_checkpoint_exit_2(tmp_path):
    cfg = tmp_path / "run.conf"
    out = tmp_path / "runs"
    write_config(cfg, out)
    assert main(["prepare", "--config", str(cfg)]) == 0
    assert main(["evaluate", "--config", str(cfg)]) == 2  # never trained


def test_config_overrides(tmp_path):
    cfg = tmp_path / "run.conf"
    out = tmp_path / "runs"
    write_config(cfg, out)
    assert main(["prepare", "--config", str(cfg), "--set", "n_users=10",
                 "--set", "interactions_per_user=40"]) == 0
    run_dirs = [d for d in os.listdir(out)]
    metas = []
    for d in run_dirs:
        p = os.path.join(out, d, "prepared", "meta.json")
        if os.path.exists(p):
            metas.append(json.load(open(p)))
    assert any(m["n_users"] == 10 for m in metas)


def test_calibration_rerank_cli(tmp_path):
    cfg = tmp_path / "run.conf"
    out = tmp_path / "runs"
    write_config(cfg, out)
    main(["prepare", "--config", str(cfg)])
    main(["train", "--config", str(cfg)])
    assert main(["evaluate", "--config", str(cfg), "--calibration", "0.1"]) == 0
    run = run_dir_of(out)
    assert os.path.exists(os.path.join(run, "reports", "Calibration_summary.json"))
