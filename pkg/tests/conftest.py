"""Shared fixtures: hand-built grids and a small cached dataset."""

import numpy as np
import pytest

from gridstab import (
    Grid,
    GrowthParams,
    IntegratorConfig,
    PerturbationBox,
    build_dataset,
    split_dataset,
)

# loose tolerances keep the simulation-heavy tests fast; correctness-critical
# tests construct their own tighter IntegratorConfig
FAST_INTEGRATOR = IntegratorConfig(rel_tol=1e-3, abs_tol=1e-6)


@pytest.fixture
def two_node_grid():
    return Grid(id="pair", num_nodes=2, edges=[[0, 1]], power=[1.0, -1.0])


@pytest.fixture
def path3():
    return Grid(id="path3", num_nodes=3, edges=[[0, 1], [1, 2]])


@pytest.fixture
def triangle():
    return Grid(id="tri", num_nodes=3, edges=[[0, 1], [0, 2], [1, 2]])


@pytest.fixture
def square_grid():
    """4-cycle with balanced power, fine for dynamics and features alike."""
    return Grid(id="square", num_nodes=4, edges=[[0, 1], [1, 2], [2, 3], [0, 3]],
                power=[1.0, -1.0, 1.0, -1.0])


def random_connected_grid(rng, n, extra_edges=2, with_power=False):
    """Random tree plus a few chords; guaranteed connected and simple."""
    edges = {(min(i, j), max(i, j))
             for i, j in ((i, int(rng.integers(i))) for i in range(1, n))}
    for _ in range(extra_edges):
        i, j = rng.choice(n, size=2, replace=False)
        edges.add((min(i, j), max(i, j)))
    power = None
    if with_power:
        assert n % 2 == 0
        perm = rng.permutation(n)
        power = np.full(n, -1.0)
        power[perm[: n // 2]] = 1.0
    return Grid(id=f"rand{n}", num_nodes=n, edges=sorted(edges), power=power)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Six 8-node grids with coarse SNBS targets, split 3/1/2 folds."""
    out = tmp_path_factory.mktemp("tiny_ds")
    ds = build_dataset(
        count=6, growth=GrowthParams(n=8), box=PerturbationBox(),
        trials=30, master_seed=7, integrator=FAST_INTEGRATOR, out_dir=out,
    )
    return split_dataset(ds, (0.5, 0.25, 0.25), seed=1)
