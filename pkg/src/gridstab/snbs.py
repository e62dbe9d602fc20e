"""Single-node basin stability by deterministic, parallel Monte Carlo.

For every node, `trials` simulations start at the synchronous fixed point
with that node's phase and frequency replaced by a uniform draw from the
perturbation box.  The per-node success fraction estimates the probability
that the whole grid returns to the synchronous state (a Bernoulli expected
value).  Perturbations are derived with a counter-based RNG keyed by
(seed, node, trial), so estimates are bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernel, rng
from .dynamics import DEFAULT_OMEGA_TOL, TAIL_FRACTION, IntegratorConfig, SwingParams, find_fixed_point
from .topology import Grid

logger = logging.getLogger("gridstab.snbs")

DEFAULT_TRIALS = 10_000       # dataset-quality runs
DESK_TRIALS = 500             # desk-scale runs


@dataclass
class PerturbationBox:
    """Rectangle of single-node (phase, frequency) perturbations.

    A degenerate range (lo == hi) is allowed as a test mode; it pins the
    perturbed coordinate to a single value.
    """

    theta_range: tuple[float, float] = (-np.pi, np.pi)
    omega_range: tuple[float, float] = (-15.0, 15.0)

    def __post_init__(self):
        tlo, thi = self.theta_range
        olo, ohi = self.omega_range
        if tlo > thi or olo > ohi:
            raise ValueError("box ranges need lo <= hi")
        if tlo < -np.pi - 1e-12 or thi > np.pi + 1e-12:
            raise ValueError("theta_range must lie within [-pi, pi]")

    def to_dict(self) -> dict:
        return {"theta_range": list(self.theta_range), "omega_range": list(self.omega_range)}


@dataclass
class SnbsEstimate:
    grid_id: str
    snbs: np.ndarray
    trials: int
    standard_error: np.ndarray

    def __post_init__(self):
        self.snbs = np.asarray(self.snbs, dtype=np.float64)
        self.standard_error = np.asarray(self.standard_error, dtype=np.float64)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if np.any((self.snbs < 0) | (self.snbs > 1)):
            raise ValueError("snbs values must lie in [0, 1]")


def bernoulli_se(p: float, trials: int) -> float:
    """Standard error sqrt(p(1-p)/trials) of a Bernoulli success fraction."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0,1], got {p}")
    return float(np.sqrt(p * (1.0 - p) / trials))


def sample_perturbations(box: PerturbationBox, seed: int, node_idx: np.ndarray,
                         trial_idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Counter-based uniform draws from the box for each (node, trial) pair."""
    u_th = rng.counter_uniform(seed, node_idx, trial_idx, stream=0)
    u_om = rng.counter_uniform(seed, node_idx, trial_idx, stream=1)
    tlo, thi = box.theta_range
    olo, ohi = box.omega_range
    return tlo + (thi - tlo) * u_th, olo + (ohi - olo) * u_om


def _run_chunk(args):
    (fp_th, fp_om, eu, ev, power, alpha, coupling, node_idx, pert_th, pert_om,
     rel_tol, abs_tol, t_end, max_steps, omega_tol, tail_start) = args
    conv = np.zeros(len(node_idx), dtype=np.uint8)
    status = np.zeros(len(node_idx), dtype=np.uint8)
    _kernel.snbs_trials(fp_th, fp_om, eu, ev, power, alpha, coupling,
                        node_idx, pert_th, pert_om,
                        rel_tol, abs_tol, t_end, max_steps, omega_tol, tail_start,
                        conv, status)
    return conv, status


def estimate_snbs(grid: Grid, params: SwingParams, box: PerturbationBox,
                  trials: int, seed: int, cfg: IntegratorConfig,
                  omega_tol: float = DEFAULT_OMEGA_TOL,
                  workers: int = 1) -> SnbsEstimate:
    """Monte-Carlo SNBS estimate for every node of `grid`.

    Bit-identical for identical inputs regardless of `workers`: each trial's
    perturbation is a pure function of (seed, node, trial) and results are
    aggregated positionally.  Integration failures (blow-up, step-limit)
    count as non-converged and are logged, never dropped.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    t0 = time.perf_counter()
    fp = find_fixed_point(grid, params)
    n = grid.num_nodes

    node_idx = np.repeat(np.arange(n, dtype=np.int64), trials)
    trial_idx = np.tile(np.arange(trials, dtype=np.int64), n)
    pert_th, pert_om = sample_perturbations(box, seed, node_idx, trial_idx)

    eu = np.ascontiguousarray(grid.edges[:, 0])
    ev = np.ascontiguousarray(grid.edges[:, 1])
    tail_start = (1.0 - TAIL_FRACTION) * cfg.t_end

    def chunk_args(sl):
        return (fp.theta, fp.omega, eu, ev, params.power, params.alpha,
                params.coupling, node_idx[sl], pert_th[sl], pert_om[sl],
                cfg.rel_tol, cfg.abs_tol, cfg.t_end, cfg.max_steps,
                omega_tol, tail_start)

    total = n * trials
    if workers <= 1 or total < 2 * workers:
        conv, status = _run_chunk(chunk_args(slice(None)))
    else:
        bounds = np.linspace(0, total, workers + 1).astype(int)
        slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        conv_parts = [None] * len(slices)
        status_parts = [None] * len(slices)
        # spawn: forking after the JIT runtime has started its thread pool
        # is unsafe, and spawned workers reuse the on-disk kernel cache anyway
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = [pool.submit(_run_chunk, chunk_args(sl)) for sl in slices]
            for i, fut in enumerate(futures):
                conv_parts[i], status_parts[i] = fut.result()
        conv = np.concatenate(conv_parts)
        status = np.concatenate(status_parts)

    failures = int(np.sum(status >= _kernel.STATUS_MAXSTEPS))
    if failures:
        logger.warning("grid %s: %d/%d trials failed to integrate (counted as "
                       "non-converged)", grid.id, failures, total)

    counts = conv.astype(np.int64).reshape(n, trials).sum(axis=1)
    p = counts / trials
    se = np.sqrt(p * (1.0 - p) / trials)
    logger.info("grid %s: SNBS from %d trials x %d nodes in %.1f s",
                grid.id, trials, n, time.perf_counter() - t0)
    return SnbsEstimate(grid_id=grid.id, snbs=p, trials=trials, standard_error=se)


def snbs_csv_rows(est: SnbsEstimate):
    """Rows for the SNBS CSV: grid_id,node_id,snbs,trials,standard_error."""
    for i in range(len(est.snbs)):
        yield [est.grid_id, i, f"{est.snbs[i]:.10g}", est.trials,
               f"{est.standard_error[i]:.10g}"]
