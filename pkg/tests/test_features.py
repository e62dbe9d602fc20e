"""Design-matrix assembly: ordering, train-only statistics, no leakage."""

import numpy as np
import pytest

from gridstab import (
    FEATURE_COLUMNS,
    FeaturePipelineConfig,
    Grid,
    SnbsEstimate,
    StabilityDataset,
    build_design_matrix,
    network_measures,
    transform_foreign,
)
from gridstab.features import grid_feature_cache, write_design_csv


def _feature_dataset(n_grids=6, num_nodes=4):
    """Toy dataset with distinct topologies so features have variance."""
    rng = np.random.default_rng(3)
    grids, targets = [], []
    for i in range(n_grids):
        edges = [[0, 1], [1, 2], [2, 3], [0, 3]]
        if i % 2:
            edges.append([0, 2])
        power = np.array([1.0, -1.0, 1.0, -1.0])
        gid = f"g{i:03d}"
        grids.append(Grid(id=gid, num_nodes=num_nodes, edges=edges, power=power))
        p = rng.uniform(0.2, 1.0, num_nodes)
        targets.append(SnbsEstimate(grid_id=gid, snbs=p, trials=10,
                                    standard_error=np.sqrt(p * (1 - p) / 10)))
    split = {g.id: ("train" if i < 3 else "valid" if i == 3 else "test")
             for i, g in enumerate(grids)}
    return StabilityDataset(grids=grids, targets=targets, split=split)


def test_raw_matrix_equals_measures():
    ds = _feature_dataset()
    dm = build_design_matrix(ds, FeaturePipelineConfig(standardize=False))
    g0 = sorted(ds.fold_grids("train"), key=lambda g: g.id)[0]
    assert np.allclose(dm.X["train"][:4], network_measures(g0).values)
    assert dm.index["train"][:4] == [(g0.id, i) for i in range(4)]


def test_standardized_train_statistics():
    ds = _feature_dataset()
    dm = build_design_matrix(ds, FeaturePipelineConfig())
    x = dm.X["train"]
    varying = dm.train_std != 1.0
    assert np.all(np.abs(x[:, varying].mean(axis=0)) <= 1e-10)
    assert np.allclose(x[:, varying].std(axis=0), 1.0, atol=1e-10)


def test_no_leakage_from_test_fold():
    # make the test fold wildly different; train statistics must not move
    ds = _feature_dataset()
    a = build_design_matrix(ds, FeaturePipelineConfig())
    grids = list(ds.grids)
    # denser replacement grid only in the test fold
    test_id = [g.id for g in grids if ds.split[g.id] == "test"][0]
    dense = Grid(id=test_id, num_nodes=4,
                 edges=[[i, j] for i in range(4) for j in range(i + 1, 4)],
                 power=[1.0, -1.0, 1.0, -1.0])
    grids = [dense if g.id == test_id else g for g in grids]
    ds2 = StabilityDataset(grids=grids, targets=ds.targets, split=ds.split)
    b = build_design_matrix(ds2, FeaturePipelineConfig())
    assert np.array_equal(a.train_mean, b.train_mean)
    assert np.array_equal(a.train_std, b.train_std)
    assert np.array_equal(a.X["train"], b.X["train"])
    assert not np.array_equal(a.X["test"], b.X["test"])


def test_row_target_alignment():
    ds = _feature_dataset()
    dm = build_design_matrix(ds, FeaturePipelineConfig(standardize=False))
    for fold in dm.X:
        for (gid, nid), y in zip(dm.index[fold], dm.y[fold]):
            assert y == ds.target_for(gid).snbs[nid]


def test_column_subset():
    ds = _feature_dataset()
    cfg = FeaturePipelineConfig(standardize=False, columns=("degree", "power"))
    dm = build_design_matrix(ds, cfg)
    assert dm.X["train"].shape[1] == 2
    with pytest.raises(ValueError):
        FeaturePipelineConfig(columns=("degree", "bogus"))


def test_zero_variance_column_unscaled(caplog):
    ds = _feature_dataset()
    # clustering is 0 on every 4-cycle; drop the chord grids so the
    # train fold has a constant column
    keep = [g for g in ds.grids if len(g.edges) == 4]
    split = {g.id: f for g, f in zip(keep, ("train", "train", "valid"))}
    targets = [t for t in ds.targets if t.grid_id in split]
    ds2 = StabilityDataset(grids=keep, targets=targets, split=split)
    with caplog.at_level("WARNING", logger="gridstab.features"):
        dm = build_design_matrix(ds2, FeaturePipelineConfig())
    assert "zero-variance" in caplog.text
    ci = FEATURE_COLUMNS.index("clustering")
    assert np.all(dm.X["train"][:, ci] == 0.0)  # left unscaled, raw zeros
    assert dm.train_std[ci] == 1.0


def test_transform_foreign_uses_train_stats():
    ds = _feature_dataset()
    dm = build_design_matrix(ds, FeaturePipelineConfig())
    x, y, index = transform_foreign(dm, ds)
    # the foreign transform of the same dataset reproduces the fold rows
    lookup = {pair: row for pair, row in zip(index, x)}
    for fold in dm.X:
        for pair, row in zip(dm.index[fold], dm.X[fold]):
            assert np.allclose(lookup[pair], row, atol=1e-12)
    assert len(y) == len(index) == 24


def test_write_design_csv(tmp_path):
    ds = _feature_dataset()
    dm = build_design_matrix(ds, FeaturePipelineConfig(standardize=False))
    path = tmp_path / "design_train.csv"
    write_design_csv(dm, "train", path)
    lines = path.read_text().splitlines()
    assert lines[0] == "grid_id,node_id," + ",".join(FEATURE_COLUMNS) + ",target"
    assert len(lines) == 1 + len(dm.y["train"])


def test_cache_reuse():
    ds = _feature_dataset()
    cache = grid_feature_cache(ds)
    a = build_design_matrix(ds, FeaturePipelineConfig(), cache=cache)
    b = build_design_matrix(ds, FeaturePipelineConfig())
    assert np.array_equal(a.X["train"], b.X["train"])
