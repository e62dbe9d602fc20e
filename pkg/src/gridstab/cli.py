"""Command-line pipeline: generate, features, train, eval, ablate, report.

All subcommands take `--config <file> --out <dir>` plus optional
`--workers <n>` (env override GRIDSTAB_WORKERS) and `--seed <n>`.  A fully
resolved copy of the configuration is written next to the outputs before any
work starts.  Exit codes: 2 configuration, 3 data, 4 compute.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    DatasetError,
    StabilityDataset,
    build_dataset,
    load_dataset,
    save_dataset,
    snbs_histogram,
    split_dataset,
    histogram_csv_rows,
)
from .dynamics import IntegratorConfig, NoFixedPoint
from .features import FeaturePipelineConfig, build_design_matrix, grid_feature_cache, transform_foreign, write_design_csv
from .ml import (
    TrainConfig,
    TrainingDiverged,
    evaluate_protocol,
    foreign_graphs,
    prepare_graphs,
    preset,
    train_protocol,
)
from .ml.models import ModelSpec, load_checkpoint, save_checkpoint
from .ml.training import ProtocolResult, TrainRun
from .snbs import PerturbationBox
from .topology import GridError, GrowthParams, feature_csv_rows

logger = logging.getLogger("gridstab.cli")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_COMPUTE = 4


class ConfigError(ValueError):
    pass


_DEFAULT_CONFIG = {
    "dataset": {
        "dir": "dataset",
        "count": 10,
        "growth": {"n": 20, "n0": 1, "p": 0.2, "q": 0.3, "r": 1 / 3, "s": 0.1},
        "trials": 500,
        "coupling": 9.0,
        "damping": 0.1,
        "box": {"theta_range": [-np.pi, np.pi], "omega_range": [-15.0, 15.0]},
        "integrator": {"rel_tol": 1e-7, "abs_tol": 1e-7, "t_end": 100.0,
                       "max_steps": 1_000_000},
        "omega_tol": 0.1,
        "master_seed": 0,
        "split": {"ratios": [0.7, 0.15, 0.15], "seed": 42},
    },
    "features": {"standardize": True},
    "train": {
        "model": "tag_small",
        "learning_rate": 0.2,
        "batch_size": 10,
        "epochs": 200,
        "seed": 0,
        "scheduler": None,
        "num_seeds": 5,
        "top_k_average": 3,
    },
    "eval": {"tasks": [{"name": "test", "fold": "test"}]},
    "ablate": {"fractions": [0.25, 0.5, 1.0], "num_seeds": 3},
    "report": {"bins": 20},
    "workers": 1,
}


def _merge(defaults, override, path="config"):
    if override is None:
        return copy.deepcopy(defaults)
    if isinstance(defaults, dict):
        if not isinstance(override, dict):
            raise ConfigError(f"{path} must be an object")
        out = copy.deepcopy(defaults)
        for key, value in override.items():
            if key in defaults:
                out[key] = _merge(defaults[key], value, f"{path}.{key}")
            else:
                out[key] = copy.deepcopy(value)
        return out
    return copy.deepcopy(override)


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = _merge(_DEFAULT_CONFIG, raw)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: dict):
    ds = cfg["dataset"]
    try:
        GrowthParams(**ds["growth"])
        PerturbationBox(theta_range=tuple(ds["box"]["theta_range"]),
                        omega_range=tuple(ds["box"]["omega_range"]))
        IntegratorConfig(**ds["integrator"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid dataset configuration: {exc}") from exc
    if int(ds["count"]) < 1 or int(ds["trials"]) < 1:
        raise ConfigError("dataset.count and dataset.trials must be >= 1")
    tr = cfg["train"]
    try:
        _train_config(cfg)
    except ValueError as exc:
        raise ConfigError(f"invalid train configuration: {exc}") from exc
    if not isinstance(tr["model"], (str, dict)):
        raise ConfigError("train.model must be a preset name or a model spec object")
    for task in cfg["eval"]["tasks"]:
        if "name" not in task:
            raise ConfigError("every eval task needs a name")
        if ("fold" in task) == ("dataset" in task):
            raise ConfigError(f"eval task {task.get('name')}: exactly one of "
                              "'fold' or 'dataset' is required")
    fr = cfg["ablate"]["fractions"]
    if not fr or any(not 0 < f <= 1 for f in fr):
        raise ConfigError("ablate.fractions must be in (0, 1]")


def _train_config(cfg) -> TrainConfig:
    tr = cfg["train"]
    return TrainConfig(
        learning_rate=float(tr["learning_rate"]), batch_size=int(tr["batch_size"]),
        epochs=int(tr["epochs"]), seed=int(tr["seed"]), scheduler=tr["scheduler"],
        num_seeds=int(tr["num_seeds"]), top_k_average=int(tr["top_k_average"]),
    )


def _model_spec(cfg) -> ModelSpec:
    model = cfg["train"]["model"]
    if isinstance(model, str):
        return preset(model)
    return ModelSpec.from_dict(model)


def _resolve_workers(args, cfg) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("GRIDSTAB_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"GRIDSTAB_WORKERS must be an integer, got {env!r}") from exc
    return int(cfg.get("workers", 1))


def _write_resolved(cfg: dict, out: Path, workers: int, command: str):
    out.mkdir(parents=True, exist_ok=True)
    resolved = copy.deepcopy(cfg)
    resolved["workers"] = workers
    resolved["code_version"] = __version__
    with open(out / f"resolved_config_{command}.json", "w") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _dataset_dir(cfg, out: Path) -> Path:
    d = Path(cfg["dataset"]["dir"])
    return d if d.is_absolute() else out / d


def _load_ds(cfg, out: Path) -> StabilityDataset:
    return load_dataset(_dataset_dir(cfg, out))


def cmd_generate(cfg, out: Path, workers: int) -> None:
    ds_cfg = cfg["dataset"]
    ds = build_dataset(
        count=int(ds_cfg["count"]),
        growth=GrowthParams(**ds_cfg["growth"]),
        box=PerturbationBox(theta_range=tuple(ds_cfg["box"]["theta_range"]),
                            omega_range=tuple(ds_cfg["box"]["omega_range"])),
        trials=int(ds_cfg["trials"]),
        master_seed=int(ds_cfg["master_seed"]),
        coupling=float(ds_cfg["coupling"]),
        damping=float(ds_cfg["damping"]),
        integrator=IntegratorConfig(**ds_cfg["integrator"]),
        omega_tol=float(ds_cfg["omega_tol"]),
        out_dir=_dataset_dir(cfg, out),
        workers=workers,
    )
    ds = split_dataset(ds, tuple(ds_cfg["split"]["ratios"]),
                       seed=int(ds_cfg["split"]["seed"]))
    save_dataset(ds, _dataset_dir(cfg, out))
    print(f"generated {len(ds.grids)} grids -> {_dataset_dir(cfg, out)}")


def cmd_features(cfg, out: Path, workers: int) -> None:
    ds = _load_ds(cfg, out)
    fdir = out / "features"
    fdir.mkdir(parents=True, exist_ok=True)
    cache = grid_feature_cache(ds)
    with open(fdir / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_id", "node_id", "degree", "avg_neighbor_degree",
                    "clustering", "cf_betweenness", "closeness", "power"])
        for gid in sorted(cache):
            w.writerows(feature_csv_rows(cache[gid]))
    dm = build_design_matrix(ds, FeaturePipelineConfig(**cfg["features"]), cache=cache)
    for fold in dm.X:
        write_design_csv(dm, fold, fdir / f"design_{fold}.csv")
    print(f"features for {len(cache)} grids -> {fdir}")


def _prepare(cfg, out, spec, ds):
    design = None
    if spec.input == "features":
        design = build_design_matrix(ds, FeaturePipelineConfig(**cfg["features"]))
    return prepare_graphs(ds, spec, design), design


def cmd_train(cfg, out: Path, workers: int) -> None:
    ds = _load_ds(cfg, out)
    spec = _model_spec(cfg)
    tcfg = _train_config(cfg)
    folds, _ = _prepare(cfg, out, spec, ds)
    protocol = train_protocol(spec, folds, tcfg)
    tdir = out / "train" / spec.name
    tdir.mkdir(parents=True, exist_ok=True)
    for run in protocol.runs:
        if run.diverged:
            continue
        save_checkpoint(protocol.model_for(run), tdir / f"seed{run.seed}.npz",
                        manifest={"train": tcfg.to_dict(), "val_r2": run.val_r2,
                                  "best_epoch": run.best_epoch})
    with open(tdir / "protocol.json", "w") as fh:
        json.dump({
            "model": spec.to_dict(),
            "train": tcfg.to_dict(),
            "runs": [{"seed": r.seed, "val_r2": r.val_r2, "diverged": r.diverged,
                      "best_epoch": r.best_epoch, "train_loss": r.train_loss,
                      "valid_loss": r.valid_loss} for r in protocol.runs],
            "selected_seeds": [r.seed for r in protocol.selected],
        }, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"trained {spec.name}: selected seeds "
          f"{[r.seed for r in protocol.selected]} -> {tdir}")


def _load_protocol(cfg, out: Path) -> ProtocolResult:
    spec = _model_spec(cfg)
    tdir = out / "train" / spec.name
    ppath = tdir / "protocol.json"
    if not ppath.exists():
        raise DatasetError("missing_artifact", f"no training artifacts at {tdir}; "
                           "run the train command first")
    meta = json.loads(ppath.read_text())
    spec = ModelSpec.from_dict(meta["model"])
    runs = []
    for seed in meta["selected_seeds"]:
        model, _ = load_checkpoint(tdir / f"seed{seed}.npz")
        rmeta = next(r for r in meta["runs"] if r["seed"] == seed)
        runs.append(TrainRun(seed=seed, weights=model.get_weights(),
                             val_r2=rmeta["val_r2"], best_epoch=rmeta["best_epoch"]))
    return ProtocolResult(spec=spec, cfg=_train_config(cfg), runs=runs, selected=runs)


def cmd_eval(cfg, out: Path, workers: int) -> None:
    ds = _load_ds(cfg, out)
    protocol = _load_protocol(cfg, out)
    spec = protocol.spec
    edir = out / "eval"
    edir.mkdir(parents=True, exist_ok=True)
    design = None
    if spec.input == "features":
        design = build_design_matrix(ds, FeaturePipelineConfig(**cfg["features"]))
    for task in cfg["eval"]["tasks"]:
        name = task["name"]
        if "fold" in task:
            folds = prepare_graphs(ds, spec, design)
            samples = folds.get(task["fold"], [])
        else:
            other_dir = Path(task["dataset"])
            if not other_dir.is_absolute():
                other_dir = out / other_dir
            other = load_dataset(other_dir)
            pair = None
            if spec.input == "features":
                pair = transform_foreign(design, other)
            samples = foreign_graphs(other, spec, pair)
        report = evaluate_protocol(protocol, samples, name)
        report.write_json(edir / f"report_{name}.json")
        report.write_scatter_csv(edir / f"scatter_{name}.csv")
        print(f"{name}: R2 = {report.mean_r2:.4f} +- {report.std_r2:.4f} "
              f"(banded<=0.1: {report.banded:.3f})")


def cmd_ablate(cfg, out: Path, workers: int) -> None:
    ds = _load_ds(cfg, out)
    spec = _model_spec(cfg)
    tcfg = _train_config(cfg)
    ab = cfg["ablate"]
    tcfg = TrainConfig(**{**tcfg.to_dict(), "num_seeds": int(ab["num_seeds"]),
                          "top_k_average": min(int(ab["num_seeds"]),
                                               tcfg.top_k_average)})
    folds, _ = _prepare(cfg, out, spec, ds)
    train_ids = sorted(s.grid_id for s in folds["train"])
    order = np.random.default_rng(tcfg.seed).permutation(len(train_ids))
    results = []
    for frac in ab["fractions"]:
        k = max(1, int(round(frac * len(train_ids))))
        chosen = {train_ids[i] for i in order[:k]}
        sub = dict(folds)
        sub["train"] = [s for s in folds["train"] if s.grid_id in chosen]
        protocol = train_protocol(spec, sub, tcfg)
        report = evaluate_protocol(protocol, folds["test"], f"frac{frac}")
        results.append({"fraction": frac, "n_train_grids": k,
                        "mean_r2": report.mean_r2, "std_r2": report.std_r2})
        print(f"fraction {frac}: test R2 = {report.mean_r2:.4f} "
              f"+- {report.std_r2:.4f} ({k} train grids)")
    adir = out / "ablate"
    adir.mkdir(parents=True, exist_ok=True)
    with open(adir / "ablation.json", "w") as fh:
        json.dump({"model": spec.name, "results": results}, fh, indent=1,
                  sort_keys=True)
        fh.write("\n")


def cmd_report(cfg, out: Path, workers: int) -> None:
    ds = _load_ds(cfg, out)
    rdir = out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    hist = snbs_histogram(ds, bins=int(cfg["report"]["bins"]))
    with open(rdir / "snbs_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "density"])
        w.writerows(histogram_csv_rows(hist))
    summary = {"dataset": str(_dataset_dir(cfg, out)),
               "n_grids": len(ds.grids), "trials": ds.trials, "tasks": {}}
    edir = out / "eval"
    for scatter in sorted(edir.glob("scatter_*.csv")) if edir.exists() else []:
        name = scatter.stem.replace("scatter_", "", 1)
        pred, target = [], []
        with open(scatter, newline="") as fh:
            for row in csv.DictReader(fh):
                pred.append(float(row["prediction"]))
                target.append(float(row["target"]))
        pred, target = np.array(pred), np.array(target)
        summary["tasks"][name] = {
            "n_nodes": len(pred),
            "banded_accuracy_0.1": float(np.mean(np.abs(pred - target) <= 0.1)),
            "mse": float(np.mean((pred - target) ** 2)),
        }
    with open(rdir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"report -> {rdir}")


_COMMANDS = {
    "generate": cmd_generate,
    "features": cmd_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridstab",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--seed", type=int, default=None,
                       help="override dataset.master_seed and train.seed")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        workers = _resolve_workers(args, cfg)
        if args.seed is not None:
            cfg["dataset"]["master_seed"] = args.seed
            cfg["train"]["seed"] = args.seed
        out = Path(args.out)
        _write_resolved(cfg, out, workers, args.command)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _COMMANDS[args.command](cfg, out, workers)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, GridError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NoFixedPoint, TrainingDiverged, ValueError) as exc:
        print(f"compute error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return 0


if __name__ == "__main__":
    sys.exit(main())
