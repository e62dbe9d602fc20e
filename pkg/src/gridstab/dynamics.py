"""Inertial Kuramoto swing dynamics: right-hand side, fixed point, integration.

The model on a grid with adjacency A, injections P, damping alpha and global
coupling K is

    dtheta_i/dt = omega_i
    domega_i/dt = P_i - alpha * omega_i + K * sum_j A_ij sin(theta_j - theta_i)

The synchronous fixed point has omega = 0 and phases balancing the power
flows; its basin of attraction is what the Monte-Carlo module samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernel
from .topology import Grid

DEFAULT_OMEGA_TOL = 0.1
TAIL_FRACTION = 0.1
_TRACE_CAPACITY = 4096


class NoFixedPoint(RuntimeError):
    """No linearly stable synchronous state could be found."""


class MaxStepsExceeded(RuntimeError):
    pass


class NonFiniteState(RuntimeError):
    """The trajectory left the representable range (blow-up)."""


@dataclass
class State:
    theta: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if self.theta.shape != self.omega.shape or self.theta.ndim != 1:
            raise ValueError("theta and omega must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.omega))):
            raise ValueError("state contains non-finite entries")

    def copy(self) -> "State":
        return State(self.theta.copy(), self.omega.copy())


@dataclass
class SwingParams:
    alpha: float
    coupling: float
    power: np.ndarray

    def __post_init__(self):
        self.power = np.asarray(self.power, dtype=np.float64)
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.coupling > 0:
            raise ValueError(f"coupling must be > 0, got {self.coupling}")

    @classmethod
    def from_grid(cls, grid: Grid) -> "SwingParams":
        if grid.power is None:
            raise ValueError("grid has no power vector assigned")
        return cls(alpha=grid.damping, coupling=grid.coupling, power=grid.power)


@dataclass
class IntegratorConfig:
    rel_tol: float = 1e-7
    abs_tol: float = 1e-7
    t_end: float = 100.0
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def to_dict(self) -> dict:
        return {
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "t_end": self.t_end,
            "max_steps": self.max_steps,
        }


@dataclass
class IntegrationResult:
    state: State
    times: np.ndarray        # sampled times (uniform subsample of accepted steps)
    thetas: np.ndarray       # (S, N)
    omegas: np.ndarray       # (S, N)
    status: int
    n_steps: int

    def tail(self, t_end: float, fraction: float = TAIL_FRACTION) -> "np.ndarray":
        """Omega samples with t >= (1 - fraction) * t_end, final state included."""
        mask = self.times >= (1.0 - fraction) * t_end
        return self.omegas[mask]

    def converged(self, t_end: float, omega_tol: float = DEFAULT_OMEGA_TOL) -> bool:
        """Convergence verdict, valid for early-exited runs too.

        An early exit happens strictly below omega_tol and cannot change the
        verdict; otherwise the trailing window decides.
        """
        if self.status == _kernel.STATUS_EARLY:
            return True
        return classify_convergence(self.tail(t_end), omega_tol)


def _edge_arrays(grid: Grid):
    return (np.ascontiguousarray(grid.edges[:, 0]),
            np.ascontiguousarray(grid.edges[:, 1]))


def swing_rhs(state: State, params: SwingParams, grid: Grid) -> State:
    """Time derivative (dtheta, domega) packed as a State."""
    dth, dom = _swing_rhs_arrays(state.theta, state.omega, grid.edges,
                                 params.power, params.alpha, params.coupling)
    return State(dth, dom)


def _swing_rhs_arrays(theta, omega, edges, power, alpha, coupling):
    theta = np.asarray(theta, float)
    omega = np.asarray(omega, float)
    dth = omega.copy()
    dom = power - alpha * omega
    if len(edges):
        s = coupling * np.sin(theta[edges[:, 1]] - theta[edges[:, 0]])
        np.add.at(dom, edges[:, 0], s)
        np.subtract.at(dom, edges[:, 1], s)
    return dth, dom


def _coupling_jacobian(theta, edges, coupling, n):
    """d(domega)/d(theta): symmetric weighted Laplacian-like matrix."""
    jac = np.zeros((n, n))
    if len(edges):
        u, v = edges[:, 0], edges[:, 1]
        w = coupling * np.cos(theta[v] - theta[u])
        jac[u, v] += w
        jac[v, u] += w
        np.subtract.at(np.reshape(jac, -1), u * n + u, w)
        np.subtract.at(np.reshape(jac, -1), v * n + v, w)
    return jac


def find_fixed_point(grid: Grid, params: SwingParams | None = None,
                     residual_tol: float = 1e-12) -> State:
    """Locate the linearly stable synchronous state.

    Newton iteration on the power-balance residual with the global phase
    pinned at node 0, started from theta = 0; falls back to heavily damped
    integration when Newton stalls.  Raises NoFixedPoint when no solution
    converges or the solution is linearly unstable.
    """
    if params is None:
        params = SwingParams.from_grid(grid)
    n = grid.num_nodes
    theta = _newton_phases(grid, params, np.zeros(n), residual_tol)
    if theta is None:
        theta = _damped_relaxation_start(grid, params)
        if theta is not None:
            theta = _newton_phases(grid, params, theta, residual_tol)
    if theta is None:
        raise NoFixedPoint(f"Newton failed to converge for grid {grid.id}")

    theta = theta - theta[0]
    _, resid = _swing_rhs_arrays(theta, np.zeros(n), grid.edges,
                                 params.power, params.alpha, params.coupling)
    if np.max(np.abs(resid)) > 1e-10:
        raise NoFixedPoint(f"residual {np.max(np.abs(resid)):.2e} above 1e-10")

    jac = _coupling_jacobian(theta, grid.edges, params.coupling, n)
    eigs = np.linalg.eigvalsh(jac)
    # one zero mode from the global phase shift is expected; everything else
    # must be strictly negative for the full second-order system to be stable
    if eigs[-1] > 1e-8 or (n > 1 and eigs[-2] > -1e-8):
        raise NoFixedPoint(f"fixed point of grid {grid.id} is linearly unstable")
    return State(theta, np.zeros(n))


def _newton_phases(grid, params, theta0, residual_tol, max_iter=100):
    n = grid.num_nodes
    theta = theta0.astype(float).copy()
    for _ in range(max_iter):
        _, resid = _swing_rhs_arrays(theta, np.zeros(n), grid.edges,
                                     params.power, params.alpha, params.coupling)
        if np.max(np.abs(resid)) <= residual_tol:
            return theta
        jac = _coupling_jacobian(theta, grid.edges, params.coupling, n)
        try:
            step = np.linalg.solve(jac[1:, 1:], -resid[1:])
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        # damp large Newton steps to stay within the sine branch
        norm = np.max(np.abs(step))
        if norm > 1.0:
            step *= 1.0 / norm
        theta[1:] += step
    return None


def _damped_relaxation_start(grid, params):
    """Heavily overdamped integration toward the attracting phase profile."""
    n = grid.num_nodes
    heavy = SwingParams(alpha=params.alpha * 100, coupling=params.coupling,
                        power=params.power)
    cfg = IntegratorConfig(rel_tol=1e-8, abs_tol=1e-8, t_end=2000.0 * params.alpha,
                           max_steps=2_000_000)
    try:
        res = integrate(State(np.zeros(n), np.zeros(n)), heavy, grid, cfg)
    except (MaxStepsExceeded, NonFiniteState):
        return None
    return res.state.theta - res.state.theta[0]


def integrate(state0: State, params: SwingParams, grid: Grid,
              cfg: IntegratorConfig, fixed_step: float | None = None,
              early_exit: bool = False,
              omega_tol: float = DEFAULT_OMEGA_TOL) -> IntegrationResult:
    """Integrate the swing equation from `state0` over [0, cfg.t_end].

    With `fixed_step` set, the adaptive error control is bypassed and the
    embedded pair propagates at that constant step (order-study test mode).
    With `early_exit`, integration stops as soon as max|omega| <= omega_tol/10
    and max|domega| <= 1e-6, which cannot change the convergence verdict.
    """
    n = grid.num_nodes
    if state0.theta.shape[0] != n:
        raise ValueError("state dimension does not match grid")
    eu, ev = _edge_arrays(grid)
    th = state0.theta.copy()
    om = state0.omega.copy()
    cap = _TRACE_CAPACITY
    trace_t = np.empty(cap)
    trace_th = np.empty((cap, n))
    trace_om = np.empty((cap, n))
    status, ntr, steps = _kernel.integrate_with_trace(
        th, om, eu, ev, params.power, params.alpha, params.coupling,
        cfg.rel_tol, cfg.abs_tol, cfg.t_end, cfg.max_steps,
        -1.0 if fixed_step is None else float(fixed_step),
        early_exit, omega_tol, (1.0 - TAIL_FRACTION) * cfg.t_end,
        trace_t, trace_th, trace_om,
    )
    if status == _kernel.STATUS_MAXSTEPS:
        raise MaxStepsExceeded(f"no convergence within {cfg.max_steps} steps")
    if status == _kernel.STATUS_NONFINITE:
        raise NonFiniteState("trajectory blew up to non-finite values")
    return IntegrationResult(
        state=State(th, om),
        times=trace_t[:ntr].copy(),
        thetas=trace_th[:ntr].copy(),
        omegas=trace_om[:ntr].copy(),
        status=status,
        n_steps=steps,
    )


def classify_convergence(tail, omega_tol: float = DEFAULT_OMEGA_TOL) -> bool:
    """True iff every sampled tail state has max|omega_i| <= omega_tol.

    `tail` is either an (S, N) array of omega samples or a sequence of State.
    """
    if omega_tol <= 0:
        raise ValueError("omega_tol must be positive")
    if isinstance(tail, np.ndarray):
        omegas = np.atleast_2d(tail)
    else:
        omegas = np.array([s.omega for s in tail])
    if omegas.size == 0:
        raise ValueError("empty trajectory tail")
    return bool(np.max(np.abs(omegas)) <= omega_tol)


def dump_trajectory_csv(result: IntegrationResult, path):
    """Debug dump: one row per (sample, node) with t,node_id,theta,omega."""
    with open(path, "w") as fh:
        fh.write("t,node_id,theta,omega\n")
        for t, th, om in zip(result.times, result.thetas, result.omegas):
            for i in range(th.shape[0]):
                fh.write(f"{t:.9g},{i},{th[i]:.12g},{om[i]:.12g}\n")
