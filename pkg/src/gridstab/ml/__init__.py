"""Topology-based SNBS prediction: from-scratch GNNs, MLPs, and baselines."""

from .baselines import fit_linreg, mean_predictor, predict_linreg
from .evaluation import EvalReport, banded_accuracy, evaluate_protocol, r2_score
from .layers import graph_operators, mse_loss
from .models import Model, ModelSpec, LayerSpec, load_checkpoint, preset, save_checkpoint, PRESETS
from .training import (
    GraphSample,
    ProtocolResult,
    TrainConfig,
    TrainingDiverged,
    TrainRun,
    foreign_graphs,
    prepare_graphs,
    train_protocol,
    train_single,
)

__all__ = [
    "fit_linreg", "mean_predictor", "predict_linreg",
    "EvalReport", "banded_accuracy", "evaluate_protocol", "r2_score",
    "graph_operators", "mse_loss",
    "Model", "ModelSpec", "LayerSpec", "load_checkpoint", "preset",
    "save_checkpoint", "PRESETS",
    "GraphSample", "ProtocolResult", "TrainConfig", "TrainingDiverged",
    "TrainRun", "foreign_graphs", "prepare_graphs", "train_protocol",
    "train_single",
]
