"""Synthetic grid topologies, power assignment, and per-node graph measures.

Grids are undirected, simple, connected graphs with a balanced binary power
injection (+1 producer / -1 consumer per node).  Generation follows the
random-growth model of Schultz, Heitzig & Kurths, which grows spatially
embedded networks by attaching new nodes to their nearest neighbor and adding
redundant lines that trade off line length against gained redundancy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree, shortest_path

DEFAULT_COUPLING = 9.0
DEFAULT_DAMPING = 0.1

GRID_SCHEMA_VERSION = 1

#: Column order of the per-node feature matrix.  Fixed so that serialized
#: feature files stay stable across versions.
FEATURE_COLUMNS = (
    "degree",
    "avg_neighbor_degree",
    "clustering",
    "cf_betweenness",
    "closeness",
    "power",
)

# above this size the dense Laplacian pseudoinverse becomes the memory
# bottleneck and we switch to a sparse factorization per source-sink pair
_DENSE_CFB_LIMIT = 512


class GridError(ValueError):
    """Grid construction or validation failure with a machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class Grid:
    """Undirected connected grid topology with binary power injections.

    `power` may be None for a freshly generated topology; every consumer of
    the dynamics requires it to be assigned (see `assign_power`).
    """

    id: str
    num_nodes: int
    edges: np.ndarray  # (E, 2) int array, each row sorted, rows lexsorted
    power: np.ndarray | None = None
    coupling: float = DEFAULT_COUPLING
    damping: float = DEFAULT_DAMPING

    def __post_init__(self):
        self.edges = canonical_edges(self.edges)
        if self.power is not None:
            self.power = np.asarray(self.power, dtype=np.float64)
        self.validate()

    def validate(self):
        n = self.num_nodes
        if n < 2:
            raise GridError("too_small", f"grid needs at least 2 nodes, got {n}")
        e = self.edges
        if e.size and (e.min() < 0 or e.max() >= n):
            raise GridError("bad_index", "edge endpoint outside [0, num_nodes)")
        if np.any(e[:, 0] == e[:, 1]):
            raise GridError("self_loop", "self-loops are not allowed")
        if len(np.unique(e, axis=0)) != len(e):
            raise GridError("duplicate_edge", "duplicate edges are not allowed")
        adj = self.adjacency_sparse()
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise GridError("disconnected", f"graph has {ncomp} components")
        if self.power is not None:
            if self.power.shape != (n,):
                raise GridError("bad_power", "power vector length must equal num_nodes")
            if not np.all(np.isin(self.power, (-1.0, 1.0))):
                raise GridError("bad_power", "power entries must be -1.0 or +1.0")
            if abs(self.power.sum()) > 1e-12:
                raise GridError("unbalanced", f"sum(P) = {self.power.sum()}, expected 0")
        if not (self.coupling > 0 and self.damping > 0):
            raise GridError("bad_params", "coupling and damping must be positive")

    def adjacency_sparse(self) -> sp.csr_matrix:
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(self.num_nodes, self.num_nodes))

    def adjacency_dense(self) -> np.ndarray:
        return self.adjacency_sparse().toarray()

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.num_nodes)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "num_nodes": int(self.num_nodes),
            "edges": self.edges.tolist(),
            "power": None if self.power is None else self.power.tolist(),
            "coupling": float(self.coupling),
            "damping": float(self.damping),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        try:
            return cls(
                id=str(d["id"]),
                num_nodes=int(d["num_nodes"]),
                edges=np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2),
                power=None if d.get("power") is None else np.asarray(d["power"], float),
                coupling=float(d.get("coupling", DEFAULT_COUPLING)),
                damping=float(d.get("damping", DEFAULT_DAMPING)),
            )
        except (KeyError, TypeError) as exc:
            raise GridError("malformed", f"grid record missing/invalid field: {exc}") from exc


@dataclass
class GrowthParams:
    """Parameters of the random-growth topology model.

    The published datasets do not restate the generator parameters; these
    defaults follow the original growth-model paper and are configuration,
    not constants.
    """

    n: int = 20
    n0: int = 1
    p: float = 0.2
    q: float = 0.3
    r: float = 1 / 3
    s: float = 0.1

    def __post_init__(self):
        if self.n < 2:
            raise GridError("bad_params", f"n must be >= 2, got {self.n}")
        if not (1 <= self.n0 <= self.n):
            raise GridError("bad_params", f"need 1 <= n0 <= n, got n0={self.n0}, n={self.n}")
        for name in ("p", "q", "s"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise GridError("bad_params", f"{name} must be in [0,1], got {v}")
        if self.r < 0:
            raise GridError("bad_params", f"r must be >= 0, got {self.r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("n", "n0", "p", "q", "r", "s")}


@dataclass
class FeatureMatrix:
    """Per-node design matrix with a fixed, documented column order."""

    grid_id: str
    columns: tuple = FEATURE_COLUMNS
    values: np.ndarray = field(default_factory=lambda: np.empty((0, len(FEATURE_COLUMNS))))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite entries")


def canonical_edges(edges) -> np.ndarray:
    """Sort each edge's endpoints and lexsort the edge list.

    Canonical ordering makes generator output and serialization byte-stable.
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2).copy()
    e.sort(axis=1)
    if len(e):
        order = np.lexsort((e[:, 1], e[:, 0]))
        e = e[order]
    return e


def _hop_distances(adj: sp.csr_matrix, source: int) -> np.ndarray:
    return shortest_path(adj, method="D", unweighted=True, indices=source)


def _best_redundancy_partner(adj: sp.csr_matrix, pos: np.ndarray, i: int,
                             r: float) -> int | None:
    """Node j maximizing (hop_distance(i,j)+1)^r / euclid(i,j) over non-neighbors."""
    n = adj.shape[0]
    hop = _hop_distances(adj, i)
    cand = np.ones(n, dtype=bool)
    cand[i] = False
    cand[adj.indices[adj.indptr[i]:adj.indptr[i + 1]]] = False
    if not cand.any():
        return None
    d_e = np.linalg.norm(pos - pos[i], axis=1)
    d_e = np.maximum(d_e, 1e-12)
    score = np.where(cand, (hop + 1.0) ** r / d_e, -np.inf)
    return int(score.argmax())


def generate_growth_grid(params: GrowthParams, seed: int) -> Grid:
    """Grow a connected grid topology of exactly `params.n` nodes.

    Deterministic in (params, seed).  The returned grid has no power vector
    assigned yet.
    """
    rng = np.random.default_rng(seed)
    n = params.n

    n0 = params.n0
    pos = rng.uniform(size=(n0, 2))
    edge_set: set[tuple[int, int]] = set()
    if n0 > 1:
        dists = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
        mst = minimum_spanning_tree(dists).tocoo()
        for u, v in zip(mst.row, mst.col):
            edge_set.add((min(u, v), max(u, v)))

    def rebuild_adj(count: int) -> sp.csr_matrix:
        if not edge_set:
            return sp.csr_matrix((count, count))
        e = np.array(sorted(edge_set), dtype=np.int64)
        data = np.ones(2 * len(e))
        return sp.csr_matrix(
            (data, (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
            shape=(count, count),
        )

    # redundant lines within the seed network
    m0 = int(np.floor(n0 * (1 - params.s) * (params.p + params.q)))
    for _ in range(m0):
        i = int(rng.integers(n0))
        j = _best_redundancy_partner(rebuild_adj(n0), pos, i, params.r)
        if j is not None:
            edge_set.add((min(i, j), max(i, j)))

    positions = list(pos)
    while len(positions) < n:
        count = len(positions)
        split = count >= 2 and edge_set and rng.uniform() < params.s
        if split:
            # split a random existing line with the new node at its midpoint
            lines = sorted(edge_set)
            a, b = lines[int(rng.integers(len(lines)))]
            new = count
            positions.append(0.5 * (positions[a] + positions[b]))
            edge_set.remove((a, b))
            edge_set.add((min(a, new), max(a, new)))
            edge_set.add((min(b, new), max(b, new)))
            continue
        x = rng.uniform(size=2)
        new = count
        cur = np.asarray(positions)
        nearest = int(np.linalg.norm(cur - x, axis=1).argmin())
        positions.append(x)
        edge_set.add((min(nearest, new), max(nearest, new)))
        count = len(positions)
        if rng.uniform() < params.p:
            j = _best_redundancy_partner(rebuild_adj(count), np.asarray(positions), new, params.r)
            if j is not None:
                edge_set.add((min(new, j), max(new, j)))
        if rng.uniform() < params.q:
            a = int(rng.integers(count))
            j = _best_redundancy_partner(rebuild_adj(count), np.asarray(positions), a, params.r)
            if j is not None:
                edge_set.add((min(a, j), max(a, j)))

    return Grid(
        id=f"growth-n{n}-s{seed}",
        num_nodes=n,
        edges=np.array(sorted(edge_set), dtype=np.int64),
    )


def assign_power(grid: Grid, seed: int) -> Grid:
    """Assign +1/-1 injections to a uniformly random balanced half/half split."""
    n = grid.num_nodes
    if n % 2:
        raise GridError("odd_nodes", f"balanced +-1 assignment needs even N, got {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    power = np.full(n, -1.0)
    power[perm[: n // 2]] = 1.0
    return Grid(
        id=grid.id,
        num_nodes=n,
        edges=grid.edges,
        power=power,
        coupling=grid.coupling,
        damping=grid.damping,
    )


def import_grid(path) -> Grid:
    """Load and validate a grid from its JSON file representation."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise GridError("malformed", f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise GridError("malformed", "grid file must contain a JSON object")
    return Grid.from_dict(raw)


def save_grid(grid: Grid, path):
    with open(path, "w") as fh:
        json.dump(grid.to_dict(), fh, indent=1)
        fh.write("\n")


def closeness_centrality(grid: Grid) -> np.ndarray:
    """(N-1) / sum of unweighted shortest-path distances, per node."""
    d = shortest_path(grid.adjacency_sparse(), method="D", unweighted=True)
    return (grid.num_nodes - 1) / d.sum(axis=1)


def clustering_coefficient(grid: Grid) -> np.ndarray:
    a = grid.adjacency_dense()
    deg = grid.degrees().astype(np.float64)
    triangles = np.diag(a @ a @ a) / 2.0
    denom = deg * (deg - 1) / 2.0
    out = np.zeros(grid.num_nodes)
    mask = denom > 0
    out[mask] = triangles[mask] / denom[mask]
    return out


def average_neighbor_degree(grid: Grid) -> np.ndarray:
    deg = grid.degrees().astype(np.float64)
    return grid.adjacency_sparse() @ deg / deg


def current_flow_betweenness(grid: Grid) -> np.ndarray:
    """Current-flow betweenness from unit-current flows over all node pairs.

    For every source-sink pair, a unit current enters at the source and leaves
    at the sink; a node's throughput is half the absolute current over its
    incident lines (minus the injected unit at the endpoints).  The result is
    averaged over the (N-1)(N-2)/2 pairs.

    Uses the dense Laplacian pseudoinverse up to 512 nodes and a sparse
    factorization with a per-pair solve above.
    """
    n = grid.num_nodes
    e = grid.edges
    if n == 2:
        return np.zeros(2)
    # incidence operators: edge currents from potentials, node accumulation
    if n <= _DENSE_CFB_LIMIT:
        lap = np.diag(grid.degrees().astype(float)) - grid.adjacency_dense()
        linv = np.linalg.pinv(lap)
        f = linv[e[:, 0], :] - linv[e[:, 1], :]  # (E, N): edge potential drops per unit source
        acc = np.zeros(n)
        babs = sp.csr_matrix(
            (np.ones(2 * len(e)),
             (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([np.arange(len(e))] * 2))),
            shape=(n, len(e)),
        )
        for s in range(n - 1):
            cur = np.abs(f[:, [s]] - f[:, s + 1:])  # (E, n-1-s)
            acc += (babs @ cur).sum(axis=1)
        total = 0.5 * acc - 0.5 * (n - 1)
    else:
        lap = sp.csc_matrix(
            sp.diags(grid.degrees().astype(float)) - grid.adjacency_sparse()
        )
        grounded = sp.linalg.splu(lap[1:, 1:])
        pots = np.zeros((n, n))  # column j: potentials for unit injection at j, ground at 0
        rhs = np.eye(n - 1)
        pots[1:, 1:] = grounded.solve(rhs)
        f = pots[e[:, 0], :] - pots[e[:, 1], :]
        acc = np.zeros(n)
        babs = sp.csr_matrix(
            (np.ones(2 * len(e)),
             (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([np.arange(len(e))] * 2))),
            shape=(n, len(e)),
        )
        for s in range(n - 1):
            cur = np.abs(f[:, [s]] - f[:, s + 1:])
            acc += (babs @ cur).sum(axis=1)
        total = 0.5 * acc - 0.5 * (n - 1)
    return total / ((n - 1) * (n - 2) / 2.0)


def network_measures(grid: Grid) -> FeatureMatrix:
    """Per-node feature matrix in the fixed `FEATURE_COLUMNS` order."""
    if grid.power is None:
        raise GridError("bad_power", "network_measures needs an assigned power vector")
    values = np.column_stack([
        grid.degrees().astype(np.float64),
        average_neighbor_degree(grid),
        clustering_coefficient(grid),
        current_flow_betweenness(grid),
        closeness_centrality(grid),
        grid.power,
    ])
    return FeatureMatrix(grid_id=grid.id, columns=FEATURE_COLUMNS, values=values)


def feature_csv_rows(fm: FeatureMatrix):
    """Rows for the feature CSV: grid_id,node_id,<FEATURE_COLUMNS...>."""
    for i, row in enumerate(fm.values):
        yield [fm.grid_id, i, *(f"{v:.12g}" for v in row)]
