"""GAMP for the sample-weighted elastic net and a coordinate-descent oracle.

Weights ``r`` enter the data term as sum_mu r_mu/2 (y_mu - x_mu.w)^2; a
bootstrap realization uses ``r = c / mu_b`` and samples with c = 0 drop out.
``run_gamp_batch`` runs many weight vectors side by side so that the matrix
products become matrix-matrix products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ampr import SolverOptions, StallGuard, UnbiasedEstimate
from .errors import DivergenceError, InvalidArgument
from .scalar_kernels import CHI_LIMIT, DenoiserParams
from .synthetic_data import ProblemInstance


@dataclass(frozen=True, eq=False)
class GampState:
    h: np.ndarray
    a: np.ndarray
    w_hat: np.ndarray
    qhat: float
    chi: float
    iter: int
    converged: bool = False


@dataclass(frozen=True, eq=False)
class GampBatch:
    """Column k of every array belongs to weight vector k."""

    h: np.ndarray        # (N, K)
    a: np.ndarray        # (M, K)
    w_hat: np.ndarray    # (N, K)
    qhat: np.ndarray     # (K,)
    chi: np.ndarray      # (K,)
    iters: np.ndarray    # (K,)
    converged: np.ndarray

    def column(self, k: int) -> GampState:
        return GampState(self.h[:, k], self.a[:, k], self.w_hat[:, k],
                         float(self.qhat[k]), float(self.chi[k]),
                         int(self.iters[k]), bool(self.converged[k]))


def _denoise_cols(h, qhat, params):
    theta = params.threshold
    denom = qhat + params.ridge
    active = np.abs(h) > theta
    w = np.where(active, (h - np.sign(h) * theta) / denom, 0.0)
    chi = active.mean(axis=0) / denom
    return w, chi


def _weights_matrix(weights, m):
    if weights is None:
        return np.ones((m, 1))
    r = np.asarray(weights, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if r.shape[0] != m:
        raise InvalidArgument(f"weights must have {m} rows, got {r.shape[0]}")
    if not (np.all(np.isfinite(r)) and np.all(r >= 0.0)):
        raise InvalidArgument("weights must be finite and >= 0")
    return r


def run_gamp_batch(instance: ProblemInstance, params: DenoiserParams, weights,
                   opts: SolverOptions = SolverOptions()) -> GampBatch:
    """GAMP on every column of ``weights`` (shape (M, K)), in lockstep.

    Columns freeze individually once their relative change in the estimate
    drops below ``opts.tol``.
    """
    x, y = instance.x_matrix, instance.y
    m, n = x.shape
    r = _weights_matrix(weights, m)
    k = r.shape[1]
    guard = StallGuard(opts.damping, opts.stall_window, k)

    if opts.init_h is None:
        h = np.zeros((n, k))
    else:
        h = np.repeat(np.asarray(opts.init_h, float).reshape(n, 1), k, axis=1)
    qhat = np.full(k, float(opts.init_qhat))
    a = np.zeros((m, k))
    w, chi = _denoise_cols(h, qhat, params)
    iters = np.zeros(k, dtype=int)
    done = np.zeros(k, dtype=bool)
    ymat = y[:, None]

    for t in range(opts.max_iters):
        live = np.nonzero(~done)[0]
        if live.size == 0:
            break
        hl, al, wl, cl = h[:, live], a[:, live], w[:, live], chi[live]
        rl = r[:, live]
        d = guard.damping[live]
        damped = bool(np.any(d > 0.0))
        fac = rl / (1.0 + rl * cl)
        q_new = fac.sum(axis=0) / n
        a_new = fac * (ymat - x @ wl + cl * al)
        h_new = x.T @ a_new + q_new * wl
        if damped:
            a_new = (1.0 - d) * a_new + d * al
            h_new = (1.0 - d) * h_new + d * hl
        if not (np.all(np.isfinite(h_new)) and np.all(np.isfinite(a_new))):
            bad = live[~np.all(np.isfinite(h_new), axis=0)]
            raise DivergenceError(f"GAMP diverged at iteration {t + 1} (columns {bad[:5].tolist()})",
                                  GampBatch(h, a, w, qhat, chi, iters, done))
        if np.any(q_new <= 0.0):
            # all weights zero: only the penalty remains, whose minimizer is 0
            zero = q_new <= 0.0
            q_new = np.where(zero, np.inf, q_new)
        w_new, chi_new = _denoise_cols(h_new, q_new, params)
        if np.any(~(chi_new < CHI_LIMIT)):
            bad = live[~(chi_new < CHI_LIMIT)]
            raise DivergenceError(f"GAMP diverged at iteration {t + 1} (columns {bad[:5].tolist()})",
                                  GampBatch(h, a, w, qhat, chi, iters, done))
        if damped:
            w_new = (1.0 - d) * w_new + d * wl
        change = np.linalg.norm(w_new - wl, axis=0) / np.maximum(np.linalg.norm(wl, axis=0), 1e-12)

        h[:, live], a[:, live], w[:, live] = h_new, a_new, w_new
        qhat[live], chi[live] = q_new, chi_new
        iters[live] = t + 1
        done[live] = change < opts.tol
        guard.update(change, live)

    return GampBatch(h, a, w, qhat, chi, iters, done)


def run_gamp(instance: ProblemInstance, params: DenoiserParams, weights=None,
             opts: SolverOptions = SolverOptions()) -> GampState:
    """GAMP for one weight vector; ``None`` means uniform unit weights."""
    r = _weights_matrix(weights, instance.m)
    if r.shape[1] != 1:
        raise InvalidArgument("run_gamp takes a single weight vector; use run_gamp_batch")
    return run_gamp_batch(instance, params, r, opts).column(0)


def gamp_unbiased_estimate(state: GampState, alpha: float) -> UnbiasedEstimate:
    if not state.qhat > 0.0:
        raise InvalidArgument("state.qhat must be > 0")
    q2 = state.qhat * state.qhat
    return UnbiasedEstimate(state.h / state.qhat,
                            alpha * float(np.mean(state.a * state.a)) / q2, 0.0)


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    w: np.ndarray
    sweeps: int
    converged: bool


def solve_elastic_net_reference(instance: ProblemInstance, params: DenoiserParams,
                                weights=None, tol: float = 1e-10,
                                max_sweeps: int = 100_000) -> ReferenceSolution:
    """Cyclic coordinate descent on the weighted elastic-net objective.

    Stops when the largest coordinate update in a sweep falls below ``tol``.
    """
    if not (params.threshold > 0.0 or params.ridge > 0.0):
        raise InvalidArgument("objective must be l1-regularized or strictly convex")
    x, y = instance.x_matrix, instance.y
    m, n = x.shape
    r = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    if r.shape != (m,) or np.any(r < 0.0):
        raise InvalidArgument("weights must be a nonnegative length-M vector")
    theta, ridge = params.threshold, params.ridge
    xr = x * r[:, None]
    col_sq = np.einsum("ij,ij->j", xr, x)
    w = np.zeros(n)
    resid = y.copy()
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for i in range(n):
            old = w[i]
            z = xr[:, i] @ resid + col_sq[i] * old
            denom = col_sq[i] + ridge
            new = 0.0 if abs(z) <= theta else (z - math.copysign(theta, z)) / denom
            if new != old:
                resid -= (new - old) * x[:, i]
                w[i] = new
                biggest = max(biggest, abs(new - old))
        if biggest < tol:
            return ReferenceSolution(w, sweep, True)
    return ReferenceSolution(w, max_sweeps, False)
