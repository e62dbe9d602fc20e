"""Dataset construction, persistence, splits, and target-distribution reports.

On-disk layout of a dataset directory:

    manifest.json   all generation config, seeds, schema version, checksums
    grids/<id>.json one file per grid topology
    targets.csv     grid_id,node_id,snbs,trials,standard_error
    split.csv       grid_id,fold

Construction is resumable: per-grid target records are persisted as they
complete and picked up by a re-run with the same configuration.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__ as _code_version
from . import rng
from .dynamics import DEFAULT_OMEGA_TOL, IntegratorConfig, NoFixedPoint, SwingParams
from .snbs import PerturbationBox, SnbsEstimate, estimate_snbs, snbs_csv_rows
from .topology import Grid, GrowthParams, assign_power, generate_growth_grid, save_grid

logger = logging.getLogger("gridstab.dataset")

SCHEMA_VERSION = 1
FOLDS = ("train", "valid", "test")
MAX_REGENERATION_RETRIES = 100


class DatasetError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class StabilityDataset:
    grids: list
    targets: list
    split: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        by_id = {t.grid_id: t for t in self.targets}
        if len(by_id) != len(self.targets):
            raise DatasetError("duplicate_target", "duplicate grid_id in targets")
        for g in self.grids:
            t = by_id.get(g.id)
            if t is None:
                raise DatasetError("missing_target", f"no target record for grid {g.id}")
            if len(t.snbs) != g.num_nodes:
                raise DatasetError("shape_mismatch",
                                   f"target length {len(t.snbs)} != N={g.num_nodes} for {g.id}")
        trials = {t.trials for t in self.targets}
        if len(trials) > 1:
            raise DatasetError("nonuniform_trials",
                               f"trials must be uniform across the dataset, got {sorted(trials)}")
        known = {g.id for g in self.grids}
        for gid, fold in self.split.items():
            if gid not in known:
                raise DatasetError("unknown_grid", f"split references unknown grid {gid}")
            if fold not in FOLDS:
                raise DatasetError("bad_fold", f"unknown fold {fold!r}")

    def target_for(self, grid_id: str) -> SnbsEstimate:
        for t in self.targets:
            if t.grid_id == grid_id:
                return t
        raise KeyError(grid_id)

    def fold_grids(self, fold: str) -> list:
        return [g for g in self.grids if self.split.get(g.id) == fold]

    @property
    def trials(self) -> int:
        return self.targets[0].trials if self.targets else 0

    def all_snbs(self) -> np.ndarray:
        return np.concatenate([t.snbs for t in self.targets]) if self.targets else np.empty(0)


@dataclass
class Histogram:
    bin_edges: np.ndarray
    normalized_counts: np.ndarray

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, float)
        self.normalized_counts = np.asarray(self.normalized_counts, float)
        if np.any(self.normalized_counts < 0):
            raise ValueError("histogram counts must be non-negative")
        widths = np.diff(self.bin_edges)
        mass = float(np.sum(self.normalized_counts * widths))
        if abs(mass - 1.0) > 1e-9:
            raise ValueError(f"density must integrate to 1, got {mass}")


class _DirLock:
    """Advisory single-writer lock for a dataset directory."""

    def __init__(self, directory: Path):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DatasetError("locked",
                               f"{self.path} exists; another writer may be active "
                               "(remove the file if stale)")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def build_dataset(count: int, growth: GrowthParams, box: PerturbationBox,
                  trials: int, master_seed: int,
                  coupling: float = 9.0, damping: float = 0.1,
                  integrator: IntegratorConfig | None = None,
                  omega_tol: float = DEFAULT_OMEGA_TOL,
                  out_dir=None, workers: int = 1) -> StabilityDataset:
    """Generate `count` grids with SNBS targets, deterministically per seed.

    Grid i uses seeds derived from (master_seed, i); grids whose fixed point
    cannot be found are regenerated with the next derived seed (logged), up
    to 100 retries.  With `out_dir`, per-grid results are persisted as they
    complete and a re-run resumes from them; the final directory additionally
    holds targets.csv and manifest.json.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    integrator = integrator or IntegratorConfig()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "grids").mkdir(parents=True, exist_ok=True)
        (out / "targets").mkdir(parents=True, exist_ok=True)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "code_version": _code_version,
        "count": count,
        "growth": growth.to_dict(),
        "box": box.to_dict(),
        "trials": trials,
        "master_seed": master_seed,
        "coupling": coupling,
        "damping": damping,
        "integrator": integrator.to_dict(),
        "omega_tol": omega_tol,
    }

    grids, targets = [], []
    for i in range(count):
        gid = f"grid{i:05d}"
        if out is not None:
            gpath = out / "grids" / f"{gid}.json"
            tpath = out / "targets" / f"{gid}.json"
            if gpath.exists() and tpath.exists():
                grid = Grid.from_dict(json.loads(gpath.read_text()))
                targets.append(_target_from_dict(json.loads(tpath.read_text())))
                grids.append(grid)
                continue
        grid, est = _build_one(gid, i, growth, box, trials, master_seed,
                               coupling, damping, integrator, omega_tol, workers)
        grids.append(grid)
        targets.append(est)
        if out is not None:
            save_grid(grid, out / "grids" / f"{gid}.json")
            (out / "targets" / f"{gid}.json").write_text(json.dumps(_target_to_dict(est)))

    ds = StabilityDataset(grids=grids, targets=targets, manifest=manifest)
    if out is not None:
        save_dataset(ds, out)
    return ds


def _build_one(gid, index, growth, box, trials, master_seed,
               coupling, damping, integrator, omega_tol, workers):
    for attempt in range(MAX_REGENERATION_RETRIES):
        topo_seed = rng.derive_seed(master_seed, index, attempt, 0)
        power_seed = rng.derive_seed(master_seed, index, attempt, 1)
        mc_seed = rng.derive_seed(master_seed, index, attempt, 2)
        grid = generate_growth_grid(growth, topo_seed)
        grid = assign_power(grid, power_seed)
        grid = Grid(id=gid, num_nodes=grid.num_nodes, edges=grid.edges,
                    power=grid.power, coupling=coupling, damping=damping)
        try:
            est = estimate_snbs(grid, SwingParams.from_grid(grid), box, trials,
                                mc_seed, integrator, omega_tol=omega_tol,
                                workers=workers)
        except NoFixedPoint as exc:
            logger.warning("grid %s attempt %d rejected (%s); regenerating",
                           gid, attempt, exc)
            continue
        return grid, est
    raise DatasetError("no_fixed_point",
                       f"gave up on grid {gid} after {MAX_REGENERATION_RETRIES} retries")


def split_dataset(ds: StabilityDataset, ratios=(0.7, 0.15, 0.15),
                  seed: int = 0) -> StabilityDataset:
    """Assign train/valid/test folds by grid (never by node).

    Sizes are the floor allocation with the remainder going to train;
    deterministic per seed.
    """
    r = np.asarray(ratios, float)
    if len(r) != 3 or np.any(r < 0):
        raise ValueError("ratios must be three non-negative numbers")
    if abs(r.sum() - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {r.sum()}")
    n = len(ds.grids)
    if n < np.count_nonzero(r):
        raise DatasetError("too_few_grids",
                           f"{n} grids cannot fill {np.count_nonzero(r)} folds")
    n_valid = int(np.floor(n * r[1]))
    n_test = int(np.floor(n * r[2]))
    n_train = n - n_valid - n_test
    for size, ratio, name in ((n_train, r[0], "train"), (n_valid, r[1], "valid"),
                              (n_test, r[2], "test")):
        if ratio > 0 and size == 0:
            raise DatasetError("too_few_grids", f"fold {name} would be empty")
    order = np.random.default_rng(seed).permutation(n)
    ids = [ds.grids[i].id for i in order]
    split = {}
    for gid in ids[:n_train]:
        split[gid] = "train"
    for gid in ids[n_train:n_train + n_valid]:
        split[gid] = "valid"
    for gid in ids[n_train + n_valid:]:
        split[gid] = "test"
    manifest = dict(ds.manifest)
    manifest["split"] = {"ratios": list(map(float, r)), "seed": seed}
    return StabilityDataset(grids=ds.grids, targets=ds.targets, split=split,
                            manifest=manifest)


def snbs_histogram(ds: StabilityDataset, bins: int = 20) -> Histogram:
    """Density of all pooled nodal SNBS values over [0, 1]."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    values = ds.all_snbs()
    if values.size == 0:
        raise DatasetError("empty", "cannot histogram an empty dataset")
    counts, edges = np.histogram(values, bins=bins, range=(0.0, 1.0), density=True)
    return Histogram(bin_edges=edges, normalized_counts=counts)


def _target_to_dict(est: SnbsEstimate) -> dict:
    return {"grid_id": est.grid_id, "snbs": est.snbs.tolist(),
            "trials": est.trials, "standard_error": est.standard_error.tolist()}


def _target_from_dict(d: dict) -> SnbsEstimate:
    return SnbsEstimate(grid_id=d["grid_id"], snbs=np.asarray(d["snbs"]),
                        trials=int(d["trials"]),
                        standard_error=np.asarray(d["standard_error"]))


def save_dataset(ds: StabilityDataset, directory):
    """Write the full dataset directory; single-writer via an advisory lock."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with _DirLock(directory):
        gdir = directory / "grids"
        gdir.mkdir(exist_ok=True)
        for g in ds.grids:
            save_grid(g, gdir / f"{g.id}.json")
        tpath = directory / "targets.csv"
        with open(tpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid_id", "node_id", "snbs", "trials", "standard_error"])
            for t in sorted(ds.targets, key=lambda t: t.grid_id):
                w.writerows(snbs_csv_rows(t))
        checksums = {"targets.csv": _sha256(tpath)}
        spath = directory / "split.csv"
        if ds.split:
            with open(spath, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["grid_id", "fold"])
                for gid in sorted(ds.split):
                    w.writerow([gid, ds.split[gid]])
            checksums["split.csv"] = _sha256(spath)
        # no timestamps: identical datasets must serialize to identical bytes
        manifest = dict(ds.manifest)
        manifest.setdefault("schema_version", SCHEMA_VERSION)
        manifest.setdefault("code_version", _code_version)
        manifest["checksums"] = checksums
        with open(directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")


def load_dataset(directory) -> StabilityDataset:
    """Load a dataset directory, verifying schema version and checksums."""
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise DatasetError("missing_manifest", f"no manifest.json in {directory}")
    manifest = json.loads(mpath.read_text())
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatasetError("schema_version",
                           f"dataset schema {version} != supported {SCHEMA_VERSION}")
    for name, digest in manifest.get("checksums", {}).items():
        path = directory / name
        if not path.exists() or _sha256(path) != digest:
            raise DatasetError("checksum", f"{name} is missing or corrupted")

    grids = []
    for path in sorted((directory / "grids").glob("*.json")):
        grids.append(Grid.from_dict(json.loads(path.read_text())))

    per_grid: dict[str, list] = {}
    with open(directory / "targets.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            per_grid.setdefault(row["grid_id"], []).append(row)
    targets = []
    for gid, rows in per_grid.items():
        rows.sort(key=lambda r: int(r["node_id"]))
        targets.append(SnbsEstimate(
            grid_id=gid,
            snbs=np.array([float(r["snbs"]) for r in rows]),
            trials=int(rows[0]["trials"]),
            standard_error=np.array([float(r["standard_error"]) for r in rows]),
        ))

    split = {}
    spath = directory / "split.csv"
    if spath.exists():
        with open(spath, newline="") as fh:
            for row in csv.DictReader(fh):
                split[row["grid_id"]] = row["fold"]
    return StabilityDataset(grids=grids, targets=targets, split=split, manifest=manifest)


def histogram_csv_rows(hist: Histogram):
    for lo, hi, dens in zip(hist.bin_edges[:-1], hist.bin_edges[1:],
                            hist.normalized_counts):
        yield [f"{lo:.6g}", f"{hi:.6g}", f"{dens:.10g}"]
