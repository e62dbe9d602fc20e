"""R²-based evaluation, in-distribution and transfer, with scatter artifacts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


def r2_score(pred, target) -> float:
    """Coefficient of determination: 1 - mse(pred, target) / mse(mean, target).

    The reference model predicts the mean of the considered targets, so it
    scores exactly 0; a perfect model scores 1.
    """
    pred = np.asarray(pred, float).reshape(-1)
    target = np.asarray(target, float).reshape(-1)
    if pred.shape != target.shape or pred.size == 0:
        raise ValueError("pred and target must be equal-length, non-empty vectors")
    denom = float(np.mean((target - target.mean()) ** 2))
    if denom == 0.0:
        raise ValueError("target is constant; R² is undefined")
    return 1.0 - float(np.mean((pred - target) ** 2)) / denom


def banded_accuracy(pred, target, band: float = 0.1) -> float:
    """Fraction of nodes with absolute prediction error <= band."""
    pred = np.asarray(pred, float).reshape(-1)
    target = np.asarray(target, float).reshape(-1)
    return float(np.mean(np.abs(pred - target) <= band))


@dataclass
class EvalReport:
    task: str
    per_seed_r2: dict                 # seed -> R² for the selected seeds
    mean_r2: float
    std_r2: float                     # population std over the selected seeds
    scatter: list = field(default_factory=list)  # (grid_id, node_id, pred, target)
    banded: float = float("nan")

    def to_dict(self):
        return {
            "task": self.task,
            "per_seed_r2": {str(k): v for k, v in self.per_seed_r2.items()},
            "mean_r2": self.mean_r2,
            "std_r2": self.std_r2,
            "banded_accuracy_0.1": self.banded,
            "n_scatter": len(self.scatter),
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def write_scatter_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid_id", "node_id", "prediction", "target"])
            for gid, nid, p, t in self.scatter:
                w.writerow([gid, nid, f"{p:.10g}", f"{t:.10g}"])


def scatter_pairs(model, samples) -> list:
    rows = []
    for s in samples:
        pred = model.forward(s.x, s.ops).reshape(-1)
        rows.extend((s.grid_id, i, float(pred[i]), float(s.y[i]))
                    for i in range(len(pred)))
    return rows


def evaluate_protocol(protocol, samples, task: str) -> EvalReport:
    """Pooled nodal R² of the protocol's selected seeds on an evaluation set.

    The scatter pairs come from the best-ranked seed; mean and population
    std aggregate the selected seeds.
    """
    if not samples:
        raise ValueError(f"evaluation set for task {task!r} is empty")
    per_seed = {}
    for run in protocol.selected:
        model = protocol.model_for(run)
        preds = np.concatenate([model.forward(s.x, s.ops).reshape(-1)
                                for s in samples])
        targets = np.concatenate([s.y for s in samples])
        per_seed[run.seed] = r2_score(preds, targets)
    values = np.array(list(per_seed.values()))
    best = protocol.model_for(protocol.selected[0])
    scatter = scatter_pairs(best, samples)
    preds = np.array([row[2] for row in scatter])
    targets = np.array([row[3] for row in scatter])
    return EvalReport(
        task=task,
        per_seed_r2=per_seed,
        mean_r2=float(values.mean()),
        std_r2=float(values.std()),
        scatter=scatter,
        banded=banded_accuracy(preds, targets),
    )
