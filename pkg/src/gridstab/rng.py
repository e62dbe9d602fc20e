"""Counter-based random number derivation for reproducible parallel Monte Carlo.

Every random draw in a simulation run is a pure function of a small integer
tuple (master seed, node index, trial index).  This makes results independent
of scheduling order and worker count: a trial's perturbation can be recomputed
anywhere without any shared generator state.

The mixing function is SplitMix64, which passes BigCrush as a 64-bit mixer and
is trivially portable.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_TO_UNIT = 1.0 / 9007199254740992.0  # 2^-53


def _mix(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, elementwise on uint64 arrays."""
    z = (x + _GOLDEN).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed: int, node: np.ndarray, trial: np.ndarray,
                    stream: int) -> np.ndarray:
    """Uniform(0, 1) draws keyed by (seed, node, trial, stream).

    `node` and `trial` broadcast against each other; `stream` distinguishes
    independent draws for the same counter (e.g. phase vs. frequency).
    """
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + np.uint64(0))
        h = _mix(h ^ np.asarray(node, dtype=np.uint64))
        h = _mix(h ^ np.asarray(trial, dtype=np.uint64) * np.uint64(0x9E3779B9))
        h = _mix(h ^ np.uint64(stream) * _GOLDEN)
    return (h >> np.uint64(11)).astype(np.float64) * _U64_TO_UNIT


def derive_seed(master_seed: int, *indices: int) -> int:
    """Derive a child integer seed from a master seed and an index path.

    Used for per-grid seeds in dataset construction and per-run seeds in
    training, so that independent work items never share RNG streams.
    """
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF))
        for idx in indices:
            h = _mix(h ^ np.uint64(idx & 0xFFFFFFFFFFFFFFFF))
    return int(h & np.uint64(0x7FFFFFFFFFFFFFFF))
