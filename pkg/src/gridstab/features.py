"""Per-node design matrices bridging graph measures to the ML baselines.

Rows are ordered (grid id ascending, node ascending); standardization
statistics come from the train fold only, so validation/test rows never
influence normalization.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import FOLDS, StabilityDataset
from .topology import FEATURE_COLUMNS, network_measures

logger = logging.getLogger("gridstab.features")


@dataclass
class FeaturePipelineConfig:
    standardize: bool = True
    columns: tuple = FEATURE_COLUMNS

    def __post_init__(self):
        unknown = set(self.columns) - set(FEATURE_COLUMNS)
        if unknown:
            raise ValueError(f"unknown feature columns: {sorted(unknown)}")


@dataclass
class DesignMatrices:
    """Per-fold (X, y) plus the (grid_id, node_id) row index for joins."""

    columns: tuple
    X: dict = field(default_factory=dict)          # fold -> (rows, F)
    y: dict = field(default_factory=dict)          # fold -> (rows,)
    index: dict = field(default_factory=dict)      # fold -> list[(grid_id, node_id)]
    train_mean: np.ndarray | None = None
    train_std: np.ndarray | None = None


def grid_feature_cache(ds: StabilityDataset) -> dict:
    """Raw network-measure matrix per grid id."""
    return {g.id: network_measures(g) for g in ds.grids}


def build_design_matrix(ds: StabilityDataset, cfg: FeaturePipelineConfig | None = None,
                        cache: dict | None = None) -> DesignMatrices:
    cfg = cfg or FeaturePipelineConfig()
    if not ds.split:
        raise ValueError("dataset has no fold assignment; run split_dataset first")
    cache = cache if cache is not None else grid_feature_cache(ds)
    col_idx = [FEATURE_COLUMNS.index(c) for c in cfg.columns]

    dm = DesignMatrices(columns=tuple(cfg.columns))
    for fold in FOLDS:
        grids = sorted(ds.fold_grids(fold), key=lambda g: g.id)
        if not grids:
            continue
        blocks, targets, index = [], [], []
        for g in grids:
            fm = cache[g.id]
            blocks.append(fm.values[:, col_idx])
            t = ds.target_for(g.id)
            targets.append(t.snbs)
            index.extend((g.id, i) for i in range(g.num_nodes))
        dm.X[fold] = np.vstack(blocks)
        dm.y[fold] = np.concatenate(targets)
        dm.index[fold] = index

    if cfg.standardize:
        if "train" not in dm.X:
            raise ValueError("standardization requires a train fold")
        mean = dm.X["train"].mean(axis=0)
        std = dm.X["train"].std(axis=0)
        degenerate = std <= 1e-12
        if degenerate.any():
            names = [c for c, d in zip(cfg.columns, degenerate) if d]
            logger.warning("zero-variance feature columns left unscaled: %s", names)
            mean = np.where(degenerate, 0.0, mean)
            std = np.where(degenerate, 1.0, std)
        for fold in dm.X:
            dm.X[fold] = (dm.X[fold] - mean) / std
        dm.train_mean, dm.train_std = mean, std
    return dm


def transform_foreign(dm: DesignMatrices, ds: StabilityDataset,
                      cache: dict | None = None):
    """Design matrix for a whole foreign dataset using `dm`'s train statistics."""
    cache = cache if cache is not None else grid_feature_cache(ds)
    col_idx = [FEATURE_COLUMNS.index(c) for c in dm.columns]
    grids = sorted(ds.grids, key=lambda g: g.id)
    X = np.vstack([cache[g.id].values[:, col_idx] for g in grids])
    y = np.concatenate([ds.target_for(g.id).snbs for g in grids])
    index = [(g.id, i) for g in grids for i in range(g.num_nodes)]
    if dm.train_mean is not None:
        X = (X - dm.train_mean) / dm.train_std
    return X, y, index


def write_design_csv(dm: DesignMatrices, fold: str, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_id", "node_id", *dm.columns, "target"])
        for (gid, nid), row, t in zip(dm.index[fold], dm.X[fold], dm.y[fold]):
            w.writerow([gid, nid, *(f"{v:.12g}" for v in row), f"{t:.10g}"])
