"""SGD training with the multi-initialization protocol.

Models are trained with plain SGD on MSE over graph mini-batches (disjoint
unions of graphs; the nodal loss is averaged over all nodes in the batch).
The protocol trains `num_seeds` initializations and averages the
`top_k_average` best by validation R² (ties broken by seed index).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import rng as _rng
from ..dataset import StabilityDataset
from .evaluation import r2_score
from .layers import graph_operators, mse_loss
from .models import Model, ModelSpec

logger = logging.getLogger("gridstab.ml")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.2
    batch_size: int = 10           # graphs per SGD step
    epochs: int = 200
    seed: int = 0
    scheduler: dict | None = None  # {"kind": "step", "step": s, "factor": f}
                                   # {"kind": "plateau", "patience": p, "factor": f}
    num_seeds: int = 5
    top_k_average: int = 3

    def __post_init__(self):
        if not self.learning_rate > 0 and self.learning_rate != 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.top_k_average > self.num_seeds:
            raise ValueError("top_k_average cannot exceed num_seeds")
        if self.scheduler is not None:
            kind = self.scheduler.get("kind")
            if kind not in ("step", "plateau"):
                raise ValueError(f"unknown scheduler kind {kind!r}")

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate, "batch_size": self.batch_size,
            "epochs": self.epochs, "seed": self.seed, "scheduler": self.scheduler,
            "num_seeds": self.num_seeds, "top_k_average": self.top_k_average,
        }


@dataclass
class GraphSample:
    grid_id: str
    ops: dict | None
    x: np.ndarray
    y: np.ndarray


def prepare_graphs(ds: StabilityDataset, spec: ModelSpec,
                   design=None) -> dict:
    """Per-fold model inputs: P column for GNNs, feature rows for MLPs."""
    folds = {}
    needs_graph = any(l.kind != "dense" for l in spec.layers)
    if spec.input == "features" and design is None:
        raise ValueError("feature-input models need a DesignMatrices argument")
    fold_names = sorted(set(ds.split.values())) if ds.split else []
    for fold in fold_names:
        samples = []
        for g in sorted(ds.fold_grids(fold), key=lambda g: g.id):
            t = ds.target_for(g.id)
            ops = graph_operators(g.adjacency_dense()) if needs_graph else None
            if spec.input == "power":
                x = g.power[:, None].astype(float)
            else:
                rows = [i for i, (gid, _) in enumerate(design.index[fold])
                        if gid == g.id]
                x = design.X[fold][rows]
            samples.append(GraphSample(g.id, ops, x, t.snbs.copy()))
        folds[fold] = samples
    return folds


def foreign_graphs(ds: StabilityDataset, spec: ModelSpec, design_pair=None) -> list:
    """The whole foreign dataset as one evaluation set (transfer tasks)."""
    needs_graph = any(l.kind != "dense" for l in spec.layers)
    samples = []
    if spec.input == "features":
        x_all, y_all, index = design_pair
        offsets = {}
        for i, (gid, _) in enumerate(index):
            offsets.setdefault(gid, []).append(i)
    for g in sorted(ds.grids, key=lambda g: g.id):
        t = ds.target_for(g.id)
        ops = graph_operators(g.adjacency_dense()) if needs_graph else None
        if spec.input == "power":
            x = g.power[:, None].astype(float)
        else:
            x = x_all[offsets[g.id]]
        samples.append(GraphSample(g.id, ops, x, t.snbs.copy()))
    return samples


def batch_loss_and_grads(model: Model, batch: list) -> float:
    """Forward+backward over a disjoint union of graphs; grads accumulate."""
    total_nodes = sum(len(s.y) for s in batch)
    loss = 0.0
    for s in batch:
        pred = model.forward(s.x, s.ops).reshape(-1)
        sq, _ = mse_loss(pred, s.y)
        loss += sq * len(s.y) / total_nodes
        grad = (2.0 / total_nodes) * (pred - s.y)
        model.backward(grad[:, None])
    return loss


def evaluate_loss(model: Model, samples: list) -> float:
    total = sum(len(s.y) for s in samples)
    loss = 0.0
    for s in samples:
        pred = model.forward(s.x, s.ops).reshape(-1)
        loss += float(np.sum((pred - s.y) ** 2))
    return loss / total


@dataclass
class TrainRun:
    seed: int
    weights: dict                  # checkpoint at best validation loss
    train_loss: list = field(default_factory=list)
    valid_loss: list = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False
    val_r2: float = float("-inf")


def train_single(spec: ModelSpec, folds: dict, cfg: TrainConfig, seed: int) -> TrainRun:
    """One SGD run; deterministic in (spec, data, cfg, seed)."""
    train = folds.get("train", [])
    valid = folds.get("valid", [])
    if not train or not valid:
        raise ValueError("training requires non-empty train and valid folds")
    model = Model(spec, seed=seed)
    lr = cfg.learning_rate
    run = TrainRun(seed=seed, weights=model.get_weights())
    best_valid = np.inf
    plateau_wait = 0

    for epoch in range(cfg.epochs):
        order = np.random.default_rng(_rng.derive_seed(seed, epoch)).permutation(len(train))
        epoch_loss = 0.0
        nbatch = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            model.zero_grads()
            loss = batch_loss_and_grads(model, batch)
            if not np.isfinite(loss):
                run.diverged = True
                raise TrainingDiverged(
                    f"seed {seed}: non-finite loss at epoch {epoch}")
            if lr > 0:
                for _, layer, name, value in model.parameters():
                    layer.params[name] = value - lr * layer.grads[name]
            epoch_loss += loss
            nbatch += 1
        vloss = evaluate_loss(model, valid)
        run.train_loss.append(epoch_loss / nbatch)
        run.valid_loss.append(vloss)
        if vloss < best_valid:
            best_valid = vloss
            run.best_epoch = epoch
            run.weights = model.get_weights()
            plateau_wait = 0
        else:
            plateau_wait += 1

        sched = cfg.scheduler
        if sched is not None:
            if sched["kind"] == "step" and (epoch + 1) % int(sched["step"]) == 0:
                lr *= float(sched["factor"])
            elif sched["kind"] == "plateau" and plateau_wait >= int(sched["patience"]):
                lr *= float(sched["factor"])
                plateau_wait = 0

    model.set_weights(run.weights)
    preds, targets = predict_all(model, valid)
    run.val_r2 = r2_score(preds, targets)
    return run


def predict_all(model: Model, samples: list):
    preds = np.concatenate([model.forward(s.x, s.ops).reshape(-1) for s in samples])
    targets = np.concatenate([s.y for s in samples])
    return preds, targets


@dataclass
class ProtocolResult:
    spec: ModelSpec
    cfg: TrainConfig
    runs: list                       # all TrainRun, including diverged stubs
    selected: list = field(default_factory=list)  # top-k runs by val R²

    def model_for(self, run: TrainRun) -> Model:
        model = Model(self.spec)
        model.set_weights(run.weights)
        return model

    def best_model(self) -> Model:
        return self.model_for(self.selected[0])


def train_protocol(spec: ModelSpec, folds: dict, cfg: TrainConfig) -> ProtocolResult:
    """Train `num_seeds` initializations; keep the `top_k_average` best.

    A diverged seed is reported and skipped, never fatal for the protocol.
    """
    runs = []
    for i in range(cfg.num_seeds):
        seed = _rng.derive_seed(cfg.seed, i) if cfg.num_seeds > 1 else cfg.seed
        try:
            run = train_single(spec, folds, cfg, seed)
        except TrainingDiverged as exc:
            logger.warning("%s: %s", spec.name, exc)
            run = TrainRun(seed=seed, weights={}, diverged=True)
        runs.append(run)
        if not run.diverged:
            logger.info("%s seed %d: val R2 = %.4f (best epoch %d)",
                        spec.name, seed, run.val_r2, run.best_epoch)
    usable = [r for r in runs if not r.diverged]
    if not usable:
        raise TrainingDiverged(f"all {cfg.num_seeds} seeds diverged for {spec.name}")
    ranked = sorted(enumerate(usable), key=lambda t: (-t[1].val_r2, t[0]))
    selected = [r for _, r in ranked[:cfg.top_k_average]]
    return ProtocolResult(spec=spec, cfg=cfg, runs=runs, selected=selected)
