"""End-to-end command-line pipeline and its exit-code taxonomy."""

import csv
import json

import numpy as np
import pytest

from gridstab.cli import EXIT_COMPUTE, EXIT_CONFIG, EXIT_DATA, main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One generate->features->train->eval->ablate->report run, shared."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps({
        "dataset": {
            "count": 6, "growth": {"n": 8}, "trials": 20,
            "integrator": {"rel_tol": 1e-3, "abs_tol": 1e-6,
                           "t_end": 100.0, "max_steps": 1_000_000},
            "master_seed": 7, "split": {"ratios": [0.5, 0.25, 0.25], "seed": 1},
        },
        "train": {"model": "tag_small", "epochs": 5, "num_seeds": 2,
                  "top_k_average": 2, "batch_size": 2},
        "eval": {"tasks": [{"name": "test", "fold": "test"},
                           {"name": "self_transfer", "dataset": "dataset"}]},
        "ablate": {"fractions": [0.5, 1.0], "num_seeds": 1},
        "report": {"bins": 10},
    }))
    out = root / "run"
    for cmd in ("generate", "features", "train", "eval", "ablate", "report"):
        assert main([cmd, "--config", str(config), "--out", str(out)]) == 0
    return config, out


def test_pipeline_artifacts(pipeline):
    _, out = pipeline
    expected = [
        "dataset/manifest.json", "dataset/targets.csv", "dataset/split.csv",
        "dataset/grids/grid00000.json",
        "features/features.csv", "features/design_train.csv",
        "train/tag_small/protocol.json",
        "eval/report_test.json", "eval/scatter_test.csv",
        "eval/report_self_transfer.json",
        "ablate/ablation.json",
        "report/snbs_histogram.csv", "report/summary.json",
        "resolved_config_generate.json", "resolved_config_report.json",
    ]
    for rel in expected:
        assert (out / rel).exists(), rel


def test_pinned_csv_headers(pipeline):
    _, out = pipeline
    heads = {
        "dataset/targets.csv": "grid_id,node_id,snbs,trials,standard_error",
        "dataset/split.csv": "grid_id,fold",
        "features/features.csv": ("grid_id,node_id,degree,avg_neighbor_degree,"
                                  "clustering,cf_betweenness,closeness,power"),
        "eval/scatter_test.csv": "grid_id,node_id,prediction,target",
    }
    for rel, head in heads.items():
        assert (out / rel).read_text().splitlines()[0] == head


def test_eval_report_contents(pipeline):
    _, out = pipeline
    report = json.loads((out / "eval" / "report_test.json").read_text())
    assert report["task"] == "test"
    assert len(report["per_seed_r2"]) == 2
    assert report["mean_r2"] <= 1.0
    with open(out / "eval" / "scatter_test.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(0.0 < float(r["prediction"]) < 1.0 for r in rows)


def test_checkpoints_and_protocol(pipeline):
    _, out = pipeline
    proto = json.loads((out / "train" / "tag_small" / "protocol.json").read_text())
    assert len(proto["selected_seeds"]) == 2
    for seed in proto["selected_seeds"]:
        assert (out / "train" / "tag_small" / f"seed{seed}.npz").exists()


def test_ablation_output(pipeline):
    _, out = pipeline
    ab = json.loads((out / "ablate" / "ablation.json").read_text())
    fractions = [r["fraction"] for r in ab["results"]]
    assert fractions == [0.5, 1.0]
    assert all(np.isfinite(r["mean_r2"]) for r in ab["results"])


def test_report_histogram_density(pipeline):
    _, out = pipeline
    with open(out / "report" / "snbs_histogram.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    mass = sum((float(r["bin_hi"]) - float(r["bin_lo"])) * float(r["density"])
               for r in rows)
    assert mass == pytest.approx(1.0, abs=1e-9)


def test_resolved_config_written(pipeline):
    config, out = pipeline
    resolved = json.loads((out / "resolved_config_generate.json").read_text())
    assert resolved["dataset"]["count"] == 6
    assert resolved["dataset"]["coupling"] == 9.0   # default materialized
    assert "code_version" in resolved
    assert resolved["workers"] == 1


def test_generate_rerun_is_stable(pipeline):
    config, out = pipeline
    before = (out / "dataset" / "targets.csv").read_bytes()
    assert main(["generate", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "dataset" / "targets.csv").read_bytes() == before


def test_exit_code_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["features", "--config", str(bad),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    bad.write_text(json.dumps({"dataset": {"count": 0}}))
    assert main(["features", "--config", str(bad),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    missing = tmp_path / "nope.json"
    assert main(["features", "--config", str(missing),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_exit_code_data(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({}))
    # no dataset generated yet -> data error
    assert main(["features", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_DATA
    # eval without training artifacts -> data error
    assert main(["eval", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_exit_code_compute(tmp_path):
    cfg = tmp_path / "c.json"
    # |P|/K > 1 on a two-node grid has no synchronous state; every candidate
    # is rejected until the retry budget aborts the build
    cfg.write_text(json.dumps({
        "dataset": {"count": 1, "growth": {"n": 2}, "trials": 1,
                    "coupling": 0.5, "master_seed": 0},
    }))
    code = main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code in (EXIT_DATA, EXIT_COMPUTE)


def test_workers_env_override(tmp_path, monkeypatch, pipeline):
    config, out = pipeline
    monkeypatch.setenv("GRIDSTAB_WORKERS", "bogus")
    assert main(["report", "--config", str(config),
                 "--out", str(out)]) == EXIT_CONFIG
    monkeypatch.setenv("GRIDSTAB_WORKERS", "2")
    assert main(["report", "--config", str(config), "--out", str(out)]) == 0
    resolved = json.loads((out / "resolved_config_report.json").read_text())
    assert resolved["workers"] == 2


def test_seed_override(tmp_path, pipeline):
    config, _ = pipeline
    out = tmp_path / "seeded"
    assert main(["generate", "--config", str(config), "--out", str(out),
                 "--seed", "99"]) == 0
    resolved = json.loads((out / "resolved_config_generate.json").read_text())
    assert resolved["dataset"]["master_seed"] == 99


def test_eval_task_validation(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"eval": {"tasks": [{"name": "x"}]}}))
    assert main(["eval", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
