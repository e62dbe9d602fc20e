"""Classical baselines on hand-crafted features: OLS regression and helpers."""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger("gridstab.ml")

_RIDGE_LAMBDA = 1e-8


def fit_linreg(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Ordinary least squares with intercept; returns (F+1,) weights.

    The intercept coefficient is last.  A rank-deficient design matrix falls
    back to ridge regression with a tiny penalty (and a warning) instead of
    failing.
    """
    x = np.asarray(features, float)
    y = np.asarray(targets, float).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ValueError("feature rows and targets must align")
    xa = np.column_stack([x, np.ones(len(x))])
    rank = np.linalg.matrix_rank(xa)
    if rank < xa.shape[1]:
        logger.warning("design matrix rank %d < %d columns; using ridge fallback",
                       rank, xa.shape[1])
        gram = xa.T @ xa + _RIDGE_LAMBDA * np.eye(xa.shape[1])
        return np.linalg.solve(gram, xa.T @ y)
    w, *_ = np.linalg.lstsq(xa, y, rcond=None)
    return w


def predict_linreg(weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, float)
    return np.column_stack([x, np.ones(len(x))]) @ weights


def mean_predictor(targets: np.ndarray):
    """Null model predicting the mean of its reference targets (R² = 0)."""
    mu = float(np.mean(targets))
    return lambda features: np.full(len(features), mu)
