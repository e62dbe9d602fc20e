"""Numba kernels for swing-equation integration and Monte-Carlo trials.

Everything here is allocation-light and JIT-compiled with on-disk caching so
that worker processes pay no recompilation cost.  The integrator is an
embedded Dormand-Prince 5(4) pair with PI step-size control and the FSAL
optimization (6 right-hand-side evaluations per step).

Status codes returned by the integration loops:
  0  reached t_end
  1  early exit (converged well before t_end)
  2  max_steps exceeded
  3  non-finite state (blow-up)
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

STATUS_DONE = 0
STATUS_EARLY = 1
STATUS_MAXSTEPS = 2
STATUS_NONFINITE = 3

# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# difference between 5th and 4th order weights
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
)

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 6.0
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0


@njit(cache=True, fastmath=True)
def rhs(th, om, dth, dom, eu, ev, p, alpha, k):
    """Swing equation right-hand side: dth = om, dom = p - alpha*om + coupling."""
    n = th.shape[0]
    for i in range(n):
        dth[i] = om[i]
        dom[i] = p[i] - alpha * om[i]
    for e in range(eu.shape[0]):
        u = eu[e]
        v = ev[e]
        s = k * np.sin(th[v] - th[u])
        dom[u] += s
        dom[v] -= s


@njit(cache=True, fastmath=True)
def _initial_step(th, om, k1t, k1o, rtol, atol, t_end):
    n = th.shape[0]
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc_t = atol + rtol * abs(th[i])
        sc_o = atol + rtol * abs(om[i])
        d0 += (th[i] / sc_t) ** 2 + (om[i] / sc_o) ** 2
        d1 += (k1t[i] / sc_t) ** 2 + (k1o[i] / sc_o) ** 2
    d0 = np.sqrt(d0 / (2 * n))
    d1 = np.sqrt(d1 / (2 * n))
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    return min(h0, 0.1 * t_end)


@njit(cache=True, fastmath=True)
def _integrate_scalar(th, om, eu, ev, p, alpha, k,
                      rtol, atol, t_end, max_steps,
                      fixed_step, early_exit, omega_tol, tail_start):
    """Integrate in place; return (status, tail_max_omega, n_steps).

    `tail_max_omega` is the maximum |omega_i| over all accepted states with
    t >= tail_start (final state included); -1.0 if no sample fell in the
    tail window.
    """
    n = th.shape[0]
    k1t = np.empty(n)
    k1o = np.empty(n)
    k2t = np.empty(n)
    k2o = np.empty(n)
    k3t = np.empty(n)
    k3o = np.empty(n)
    k4t = np.empty(n)
    k4o = np.empty(n)
    k5t = np.empty(n)
    k5o = np.empty(n)
    k6t = np.empty(n)
    k6o = np.empty(n)
    k7t = np.empty(n)
    k7o = np.empty(n)
    tmp_t = np.empty(n)
    tmp_o = np.empty(n)
    new_t = np.empty(n)
    new_o = np.empty(n)

    rhs(th, om, k1t, k1o, eu, ev, p, alpha, k)
    t = 0.0
    if fixed_step > 0.0:
        h = fixed_step
    else:
        h = _initial_step(th, om, k1t, k1o, rtol, atol, t_end)
    err_old = 1.0
    tail_max = -1.0
    steps = 0

    while t < t_end:
        if steps >= max_steps:
            return STATUS_MAXSTEPS, tail_max, steps
        if h < 1e-14 * t_end:
            return STATUS_NONFINITE, tail_max, steps
        if t + h > t_end:
            h = t_end - t

        for i in range(n):
            tmp_t[i] = th[i] + h * _A21 * k1t[i]
            tmp_o[i] = om[i] + h * _A21 * k1o[i]
        rhs(tmp_t, tmp_o, k2t, k2o, eu, ev, p, alpha, k)
        for i in range(n):
            tmp_t[i] = th[i] + h * (_A31 * k1t[i] + _A32 * k2t[i])
            tmp_o[i] = om[i] + h * (_A31 * k1o[i] + _A32 * k2o[i])
        rhs(tmp_t, tmp_o, k3t, k3o, eu, ev, p, alpha, k)
        for i in range(n):
            tmp_t[i] = th[i] + h * (_A41 * k1t[i] + _A42 * k2t[i] + _A43 * k3t[i])
            tmp_o[i] = om[i] + h * (_A41 * k1o[i] + _A42 * k2o[i] + _A43 * k3o[i])
        rhs(tmp_t, tmp_o, k4t, k4o, eu, ev, p, alpha, k)
        for i in range(n):
            tmp_t[i] = th[i] + h * (_A51 * k1t[i] + _A52 * k2t[i] + _A53 * k3t[i] + _A54 * k4t[i])
            tmp_o[i] = om[i] + h * (_A51 * k1o[i] + _A52 * k2o[i] + _A53 * k3o[i] + _A54 * k4o[i])
        rhs(tmp_t, tmp_o, k5t, k5o, eu, ev, p, alpha, k)
        for i in range(n):
            tmp_t[i] = th[i] + h * (_A61 * k1t[i] + _A62 * k2t[i] + _A63 * k3t[i]
                                    + _A64 * k4t[i] + _A65 * k5t[i])
            tmp_o[i] = om[i] + h * (_A61 * k1o[i] + _A62 * k2o[i] + _A63 * k3o[i]
                                    + _A64 * k4o[i] + _A65 * k5o[i])
        rhs(tmp_t, tmp_o, k6t, k6o, eu, ev, p, alpha, k)
        for i in range(n):
            new_t[i] = th[i] + h * (_B1 * k1t[i] + _B3 * k3t[i] + _B4 * k4t[i]
                                    + _B5 * k5t[i] + _B6 * k6t[i])
            new_o[i] = om[i] + h * (_B1 * k1o[i] + _B3 * k3o[i] + _B4 * k4o[i]
                                    + _B5 * k5o[i] + _B6 * k6o[i])
        rhs(new_t, new_o, k7t, k7o, eu, ev, p, alpha, k)

        err = 0.0
        for i in range(n):
            et = h * (_E1 * k1t[i] + _E3 * k3t[i] + _E4 * k4t[i]
                      + _E5 * k5t[i] + _E6 * k6t[i] + _E7 * k7t[i])
            eo = h * (_E1 * k1o[i] + _E3 * k3o[i] + _E4 * k4o[i]
                      + _E5 * k5o[i] + _E6 * k6o[i] + _E7 * k7o[i])
            sc_t = atol + rtol * max(abs(th[i]), abs(new_t[i]))
            sc_o = atol + rtol * max(abs(om[i]), abs(new_o[i]))
            err += (et / sc_t) ** 2 + (eo / sc_o) ** 2
        err = np.sqrt(err / (2 * n))
        steps += 1

        if fixed_step > 0.0:
            accept = True
        elif not np.isfinite(err):
            h *= _FAC_MIN
            continue
        else:
            accept = err <= 1.0

        if accept:
            t += h
            for i in range(n):
                th[i] = new_t[i]
                om[i] = new_o[i]
                k1t[i] = k7t[i]
                k1o[i] = k7o[i]
            if not np.isfinite(om[0]):
                return STATUS_NONFINITE, tail_max, steps
            if t >= tail_start:
                m = 0.0
                for i in range(n):
                    a = abs(om[i])
                    if a > m:
                        m = a
                if m > tail_max:
                    tail_max = m
            if early_exit:
                m = 0.0
                d = 0.0
                for i in range(n):
                    a = abs(om[i])
                    if a > m:
                        m = a
                    a = abs(k1o[i])
                    if a > d:
                        d = a
                if m <= 0.1 * omega_tol and d <= 1e-6:
                    return STATUS_EARLY, tail_max, steps
            if fixed_step <= 0.0:
                if err <= 1e-30:
                    fac = _FAC_MAX
                else:
                    fac = _SAFETY * err ** (-_PI_ALPHA) * err_old ** _PI_BETA
                    if fac > _FAC_MAX:
                        fac = _FAC_MAX
                    elif fac < _FAC_MIN:
                        fac = _FAC_MIN
                h *= fac
                err_old = max(err, 1e-30)
        else:
            fac = _SAFETY * err ** (-_PI_ALPHA)
            if fac < _FAC_MIN:
                fac = _FAC_MIN
            elif fac > 1.0:
                fac = 1.0
            h *= fac

    return STATUS_DONE, tail_max, steps


@njit(cache=True, fastmath=True)
def integrate_with_trace(th, om, eu, ev, p, alpha, k,
                         rtol, atol, t_end, max_steps, fixed_step,
                         early_exit, omega_tol, tail_start,
                         trace_t, trace_th, trace_om):
    """Like `_integrate_scalar` but records accepted states.

    Trace arrays must be preallocated with capacity rows; when full, every
    second sample is dropped (stride doubling) so the trace stays a uniform
    subsample.  Returns (status, n_trace, n_steps).
    """
    n = th.shape[0]
    cap = trace_t.shape[0]
    k1t = np.empty(n)
    k1o = np.empty(n)
    kt = np.empty((6, n))
    ko = np.empty((6, n))
    tmp_t = np.empty(n)
    tmp_o = np.empty(n)
    new_t = np.empty(n)
    new_o = np.empty(n)

    rhs(th, om, k1t, k1o, eu, ev, p, alpha, k)
    t = 0.0
    if fixed_step > 0.0:
        h = fixed_step
    else:
        h = _initial_step(th, om, k1t, k1o, rtol, atol, t_end)
    err_old = 1.0
    steps = 0
    ntr = 0
    stride = 1
    since_record = 0

    trace_t[0] = 0.0
    for i in range(n):
        trace_th[0, i] = th[i]
        trace_om[0, i] = om[i]
    ntr = 1

    while t < t_end:
        if steps >= max_steps:
            return STATUS_MAXSTEPS, ntr, steps
        if h < 1e-14 * t_end:
            return STATUS_NONFINITE, ntr, steps
        if t + h > t_end:
            h = t_end - t

        # stages 2..6
        for i in range(n):
            tmp_t[i] = th[i] + h * _A21 * k1t[i]
            tmp_o[i] = om[i] + h * _A21 * k1o[i]
        rhs(tmp_t, tmp_o, kt[0], ko[0], eu, ev, p, alpha, k)
        for i in range(n):
            tmp_t[i] = th[i] + h * (_A31 * k1t[i] + _A32 * kt[0, i])
            tmp_o[i] = om[i] + h * (_A31 * k1o[i] + _A32 * ko[0, i])
        rhs(tmp_t, tmp_o, kt[1], ko[1], eu, ev, p, alpha, k)
        for i in range(n):
            tmp_t[i] = th[i] + h * (_A41 * k1t[i] + _A42 * kt[0, i] + _A43 * kt[1, i])
            tmp_o[i] = om[i] + h * (_A41 * k1o[i] + _A42 * ko[0, i] + _A43 * ko[1, i])
        rhs(tmp_t, tmp_o, kt[2], ko[2], eu, ev, p, alpha, k)
        for i in range(n):
            tmp_t[i] = th[i] + h * (_A51 * k1t[i] + _A52 * kt[0, i]
                                    + _A53 * kt[1, i] + _A54 * kt[2, i])
            tmp_o[i] = om[i] + h * (_A51 * k1o[i] + _A52 * ko[0, i]
                                    + _A53 * ko[1, i] + _A54 * ko[2, i])
        rhs(tmp_t, tmp_o, kt[3], ko[3], eu, ev, p, alpha, k)
        for i in range(n):
            tmp_t[i] = th[i] + h * (_A61 * k1t[i] + _A62 * kt[0, i] + _A63 * kt[1, i]
                                    + _A64 * kt[2, i] + _A65 * kt[3, i])
            tmp_o[i] = om[i] + h * (_A61 * k1o[i] + _A62 * ko[0, i] + _A63 * ko[1, i]
                                    + _A64 * ko[2, i] + _A65 * ko[3, i])
        rhs(tmp_t, tmp_o, kt[4], ko[4], eu, ev, p, alpha, k)
        for i in range(n):
            new_t[i] = th[i] + h * (_B1 * k1t[i] + _B3 * kt[1, i] + _B4 * kt[2, i]
                                    + _B5 * kt[3, i] + _B6 * kt[4, i])
            new_o[i] = om[i] + h * (_B1 * k1o[i] + _B3 * ko[1, i] + _B4 * ko[2, i]
                                    + _B5 * ko[3, i] + _B6 * ko[4, i])
        rhs(new_t, new_o, kt[5], ko[5], eu, ev, p, alpha, k)

        err = 0.0
        for i in range(n):
            et = h * (_E1 * k1t[i] + _E3 * kt[1, i] + _E4 * kt[2, i]
                      + _E5 * kt[3, i] + _E6 * kt[4, i] + _E7 * kt[5, i])
            eo = h * (_E1 * k1o[i] + _E3 * ko[1, i] + _E4 * ko[2, i]
                      + _E5 * ko[3, i] + _E6 * ko[4, i] + _E7 * ko[5, i])
            sc_t = atol + rtol * max(abs(th[i]), abs(new_t[i]))
            sc_o = atol + rtol * max(abs(om[i]), abs(new_o[i]))
            err += (et / sc_t) ** 2 + (eo / sc_o) ** 2
        err = np.sqrt(err / (2 * n))
        steps += 1

        if fixed_step > 0.0:
            accept = True
        elif not np.isfinite(err):
            h *= _FAC_MIN
            continue
        else:
            accept = err <= 1.0

        if accept:
            t += h
            for i in range(n):
                th[i] = new_t[i]
                om[i] = new_o[i]
                k1t[i] = kt[5, i]
                k1o[i] = ko[5, i]
            if not np.isfinite(om[0]):
                return STATUS_NONFINITE, ntr, steps
            since_record += 1
            if since_record >= stride:
                if ntr >= cap:
                    # drop every second sample, keep the most recent ones aligned
                    keep = 0
                    for j in range(0, ntr, 2):
                        trace_t[keep] = trace_t[j]
                        for i in range(n):
                            trace_th[keep, i] = trace_th[j, i]
                            trace_om[keep, i] = trace_om[j, i]
                        keep += 1
                    ntr = keep
                    stride *= 2
                trace_t[ntr] = t
                for i in range(n):
                    trace_th[ntr, i] = th[i]
                    trace_om[ntr, i] = om[i]
                ntr += 1
                since_record = 0
            if early_exit:
                m = 0.0
                d = 0.0
                for i in range(n):
                    a = abs(om[i])
                    if a > m:
                        m = a
                    a = abs(k1o[i])
                    if a > d:
                        d = a
                if m <= 0.1 * omega_tol and d <= 1e-6:
                    break
            if fixed_step <= 0.0:
                if err <= 1e-30:
                    fac = _FAC_MAX
                else:
                    fac = _SAFETY * err ** (-_PI_ALPHA) * err_old ** _PI_BETA
                    if fac > _FAC_MAX:
                        fac = _FAC_MAX
                    elif fac < _FAC_MIN:
                        fac = _FAC_MIN
                h *= fac
                err_old = max(err, 1e-30)
        else:
            fac = _SAFETY * err ** (-_PI_ALPHA)
            if fac < _FAC_MIN:
                fac = _FAC_MIN
            elif fac > 1.0:
                fac = 1.0
            h *= fac

    # always record the final state
    if ntr >= cap:
        ntr = cap - 1
    if trace_t[ntr - 1] < t:
        trace_t[ntr] = t
        for i in range(n):
            trace_th[ntr, i] = th[i]
            trace_om[ntr, i] = om[i]
        ntr += 1
    status = STATUS_EARLY if t < t_end else STATUS_DONE
    return status, ntr, steps


@njit(cache=True, fastmath=True, parallel=True)
def snbs_trials(fp_th, fp_om, eu, ev, p, alpha, k,
                node_idx, pert_th, pert_om,
                rtol, atol, t_end, max_steps, omega_tol, tail_start,
                out_converged, out_status):
    """Run one perturbation trial per entry of `node_idx` in parallel.

    Trial j starts at the fixed point with node `node_idx[j]` displaced to
    (pert_th[j], pert_om[j]).  Results land at index j, so aggregate counts
    are independent of the parallel schedule.
    """
    n = fp_th.shape[0]
    for j in prange(node_idx.shape[0]):
        th = fp_th.copy()
        om = fp_om.copy()
        th[node_idx[j]] = pert_th[j]
        om[node_idx[j]] = pert_om[j]
        status, tail_max, _ = _integrate_scalar(
            th, om, eu, ev, p, alpha, k,
            rtol, atol, t_end, max_steps,
            -1.0, True, omega_tol, tail_start,
        )
        out_status[j] = status
        if status == STATUS_EARLY:
            out_converged[j] = 1
        elif status == STATUS_DONE:
            out_converged[j] = 1 if (0.0 <= tail_max <= omega_tol) else 0
        else:
            out_converged[j] = 0
