#!/usr/bin/env python3
"""Run the desk-scale benchmark experiments and freeze the results.

Reads the committed datasets under tests/fixtures/{desk20,desk100}, trains
the three reference models on the 20-node dataset, evaluates in-distribution
performance, size transfer to the 100-node dataset, and a train-set-size
ablation, then writes

  tests/fixtures/desk_scale_results.json   (all recorded numbers)
  tests/fixtures/desk_tag_small.npz        (best TAG checkpoint, re-evaluated
                                            by the acceptance suite)
"""

import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from gridstab import FeaturePipelineConfig, build_design_matrix, load_dataset
from gridstab.ml import (
    TrainConfig,
    evaluate_protocol,
    fit_linreg,
    predict_linreg,
    prepare_graphs,
    preset,
    r2_score,
    train_protocol,
)
from gridstab.ml.models import save_checkpoint
from gridstab.ml.training import foreign_graphs
from gridstab.rng import derive_seed

logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                    format="%(asctime)s %(name)s %(levelname)s %(message)s")
log = logging.getLogger("desk_experiments")

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "tests" / "fixtures"

EPOCHS = 2_000
SCHED = {"kind": "step", "step": EPOCHS // 4, "factor": 0.5}
# per-model settings chosen by validation R^2 on a coarse sweep
LEARNING_RATES = {"tag_small": 1.0, "mlp1": 0.5}
BATCH_SIZES = {"tag_small": 4, "mlp1": 2}
ABLATION_FRACTIONS = (0.25, 0.5, 1.0)


def train_config(model: str, num_seeds=5, top_k=3, epochs=EPOCHS):
    return TrainConfig(learning_rate=LEARNING_RATES[model],
                       batch_size=BATCH_SIZES[model],
                       epochs=epochs, seed=0, scheduler=dict(SCHED),
                       num_seeds=num_seeds, top_k_average=top_k)


def dataset_core_hours(directory: Path) -> float:
    """Wall time of the (single-core) simulation, from target-file mtimes."""
    stamps = sorted(p.stat().st_mtime for p in (directory / "targets").glob("*.json"))
    return (stamps[-1] - stamps[0]) / 3600.0


def eval_report_dict(report):
    return {"mean_r2": report.mean_r2,
            "per_seed_r2": {str(k): v for k, v in report.per_seed_r2.items()}}


def subsample_folds(folds, fraction, seed):
    """Deterministically keep `fraction` of the train graphs; other folds stay."""
    train = sorted(folds["train"], key=lambda s: s.grid_id)
    keep = max(1, int(round(fraction * len(train))))
    order = np.random.default_rng(seed).permutation(len(train))[:keep]
    out = dict(folds)
    out["train"] = [train[i] for i in sorted(order)]
    return out


def main():
    t_start = time.time()
    ds20 = load_dataset(FIXTURES / "desk20")
    ds100 = load_dataset(FIXTURES / "desk100")
    results = {
        "datasets": {"desk20": len(ds20.grids), "desk100": len(ds100.grids)},
        "protocol": {"epochs": EPOCHS, "batch_sizes": BATCH_SIZES,
                     "scheduler": SCHED, "learning_rates": LEARNING_RATES,
                     "num_seeds": 5, "top_k_average": 3},
    }

    design = build_design_matrix(ds20, FeaturePipelineConfig())

    # ---- linear regression baseline (closed form)
    w = fit_linreg(design.X["train"], design.y["train"])
    lin_r2 = r2_score(predict_linreg(w, design.X["test"]), design.y["test"])
    results["tr20ev20"] = {"linreg": {"mean_r2": lin_r2}}
    log.info("linreg test R2 %.4f", lin_r2)

    # ---- SGD models
    protocols = {}
    for name in ("tag_small", "mlp1"):
        spec = preset(name)
        folds = prepare_graphs(ds20, spec, design)
        proto = train_protocol(spec, folds, train_config(name))
        protocols[name] = (proto, folds)
        report = evaluate_protocol(proto, folds["test"], "test")
        results["tr20ev20"][name] = eval_report_dict(report)
        log.info("%s test R2 %.4f", name, report.mean_r2)

    # ---- size transfer: best TAG seed on the 100-node dataset
    proto, _ = protocols["tag_small"]
    best = proto.selected[0]
    model = proto.model_for(best)
    samples = foreign_graphs(ds100, proto.spec)
    preds = [model.forward(s.x, s.ops).reshape(-1) for s in samples]
    transfer_r2 = r2_score(np.concatenate(preds),
                           np.concatenate([s.y for s in samples]))
    results["tr20ev100"] = {"tag_small": {"best_seed_r2": transfer_r2,
                                          "best_seed": best.seed,
                                          "val_r2": best.val_r2}}
    save_checkpoint(model, FIXTURES / "desk_tag_small.npz",
                    manifest={"trained_on": "desk20", "seed": best.seed,
                              "val_r2": best.val_r2})
    log.info("tag_small transfer R2 on desk100: %.4f", transfer_r2)

    # ---- train-set-size ablation for TAG
    _, folds20 = protocols["tag_small"]
    points, all_per_seed = [], []
    for frac in ABLATION_FRACTIONS:
        sub = subsample_folds(folds20, frac, seed=derive_seed(0, int(frac * 100)))
        cfg = train_config("tag_small", num_seeds=3, top_k=3)
        proto_f = train_protocol(preset("tag_small"), sub, cfg)
        report = evaluate_protocol(proto_f, sub["test"], f"ablate_{frac}")
        per_seed = list(report.per_seed_r2.values())
        points.append({"fraction": frac, "mean_r2": report.mean_r2,
                       "per_seed_r2": per_seed})
        all_per_seed.append(per_seed)
        log.info("ablation %.0f%%: test R2 %.4f", frac * 100, report.mean_r2)
    # noise band: twice the largest seed-to-seed std observed at any fraction
    band = 2.0 * max(float(np.std(p)) for p in all_per_seed)
    results["ablation"] = {"tag_small": points, "noise_band": band}

    sim_hours = dataset_core_hours(FIXTURES / "desk20")
    results["pipeline_core_hours"] = sim_hours + (time.time() - t_start) / 3600.0
    results["simulation_core_hours"] = sim_hours

    out = FIXTURES / "desk_scale_results.json"
    out.write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s (pipeline %.2f core-hours)", out,
             results["pipeline_core_hours"])


if __name__ == "__main__":
    main()
