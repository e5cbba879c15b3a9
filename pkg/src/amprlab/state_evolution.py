"""State evolution (SE) of AMPR under the Gauss-Bernoulli prior.

The recursion tracks (E, chi, v) -> (qhat, chihat, vhat).  Two integration
routes are provided for the average over (w0, xi):

``closed_form``
    Exact.  The field qhat*w0 + sqrt(chihat)*xi is a centered Gaussian on
    each prior component, E[w0 m1] follows from Stein's lemma, and the
    two-copy average E[m1^2] is a bivariate-normal integral (Owen's T).
``quadrature``
    Gauss-Hermite over xi (zero atom) and a tensor rule over (w0, xi)
    (Gaussian component), with the eta average in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermitenorm

from .errors import DivergenceError, InvalidArgument
from .scalar_kernels import (CHI_LIMIT, DenoiserParams, centered_averages, poisson_moments,
                             smoothed_moments)
from .synthetic_data import SignalPrior


@dataclass(frozen=True)
class SeOptions:
    max_iters: int = 5000
    tol: float = 1e-10
    quadrature_nodes: int = 120
    damping: float = 0.5
    method: str = "closed_form"
    record: bool = False

    def __post_init__(self):
        if self.max_iters < 1 or not self.tol > 0.0:
            raise InvalidArgument("max_iters must be >= 1 and tol > 0")
        if self.quadrature_nodes < 20:
            raise InvalidArgument("quadrature_nodes must be >= 20")
        if not 0.0 <= self.damping < 1.0:
            raise InvalidArgument("damping must lie in [0, 1)")
        if self.method not in ("closed_form", "quadrature"):
            raise InvalidArgument(f"unknown SE method {self.method!r}")


@dataclass(frozen=True)
class SeInit:
    mse0: float
    qhat1: float
    vhat1: float


@dataclass(frozen=True)
class SeState:
    mse: float
    chi: float
    v: float
    qhat: float
    chihat: float
    vhat: float
    f1: float
    f2: float
    iter: int
    converged: bool = False
    trajectory: list = field(default_factory=list, repr=False, compare=False)


TRAJECTORY_COLUMNS = ("t", "mse", "chi", "v", "qhat", "chihat", "vhat", "sigma2")


def default_init(prior: SignalPrior) -> SeInit:
    """Start from the all-zero estimate: E0 is the prior's second moment."""
    return SeInit(prior.second_moment, 1.0, 1.0)


def matched_init(alpha: float, delta: float, prior: SignalPrior,
                 params: DenoiserParams, mu_b: float, init_qhat: float = 1.0,
                 init_vhat: float = 1.0) -> SeInit:
    """SE starting point reproducing AMPR's first step from h0 = 0, a0 = 0."""
    vhat0 = 0.0 if math.isinf(mu_b) else init_vhat
    sm = smoothed_moments(0.0, vhat0, init_qhat, params)
    chi0, v0 = sm.mderiv, sm.m2 - sm.m1 * sm.m1
    mse0 = prior.second_moment
    rm = poisson_moments(chi0, mu_b)
    vhat1 = alpha * (rm.f2 * v0 + (rm.f2 - rm.f1 ** 2) * (mse0 + delta))
    return SeInit(mse0, alpha * rm.f1, vhat1)


def _moments_closed_form(qhat, chihat, vhat, prior, params):
    rho = prior.rho
    zero = centered_averages(chihat, vhat, qhat, params)
    gauss = centered_averages(qhat * qhat + chihat, vhat, qhat, params)
    # Stein: E[w0 m1(h)] = qhat * E[m1'(h)] = qhat * E[md] on the Gaussian part
    mse = (1.0 - rho) * zero.m1_sq + rho * (gauss.m1_sq - 2.0 * qhat * gauss.mderiv + 1.0)
    chi = (1.0 - rho) * zero.mderiv + rho * gauss.mderiv
    v = (1.0 - rho) * (zero.m2 - zero.m1_sq) + rho * (gauss.m2 - gauss.m1_sq)
    return mse, chi, max(v, 0.0)


@lru_cache(maxsize=8)
def _hermite_rule(n):
    x, w = roots_hermitenorm(n)
    return x, w / w.sum()


def _moments_quadrature(qhat, chihat, vhat, prior, params, nodes):
    x, w = _hermite_rule(nodes)
    rho = prior.rho
    sm0 = smoothed_moments(math.sqrt(chihat) * x, vhat, qhat, params)
    w0 = x[:, None]
    sm1 = smoothed_moments(qhat * w0 + math.sqrt(chihat) * x[None, :], vhat, qhat, params)
    ww = w[:, None] * w[None, :]
    mse = (1.0 - rho) * (w @ sm0.m1 ** 2) + rho * np.sum(ww * (sm1.m1 - w0) ** 2)
    chi = (1.0 - rho) * (w @ sm0.mderiv) + rho * np.sum(ww * sm1.mderiv)
    v = (1.0 - rho) * (w @ sm0.variance) + rho * np.sum(ww * sm1.variance)
    return float(mse), float(chi), max(float(v), 0.0)


def se_moments(qhat: float, chihat: float, vhat: float, prior: SignalPrior,
               params: DenoiserParams, opts: SeOptions = SeOptions()):
    """(E, chi, v) for the effective field qhat*w0 + sqrt(chihat)*xi + sqrt(vhat)*eta."""
    if opts.method == "closed_form":
        return _moments_closed_form(qhat, chihat, vhat, prior, params)
    return _moments_quadrature(qhat, chihat, vhat, prior, params, opts.quadrature_nodes)


def _rel(new, old):
    scale = max(abs(new), abs(old))
    return 0.0 if scale == 0.0 else abs(new - old) / scale


def run_se(alpha: float, delta: float, prior: SignalPrior, params: DenoiserParams,
           mu_b: float, init: SeInit | None = None,
           opts: SeOptions = SeOptions()) -> SeState:
    """Iterate the scalar recursion to a fixed point.

    At ``mu_b = inf`` the bootstrap noise vhat is pinned to zero from the
    start, so the recursion is exactly GAMP's.  Non-convergence within
    ``opts.max_iters`` is reported through ``converged=False``.
    """
    if not (alpha > 0.0 and delta >= 0.0 and mu_b > 0.0):
        raise InvalidArgument("need alpha > 0, delta >= 0, mu_b > 0")
    init = default_init(prior) if init is None else init
    if not (init.mse0 >= 0.0 and init.qhat1 > 0.0 and init.vhat1 >= 0.0):
        raise InvalidArgument(f"invalid SE init {init}")
    infinite = math.isinf(mu_b)
    d = opts.damping

    qhat = init.qhat1
    chihat = qhat * qhat * (init.mse0 + delta) / alpha
    vhat = 0.0 if infinite else init.vhat1
    f1 = f2 = float("nan")
    prev = None
    traj = []
    for t in range(1, opts.max_iters + 1):
        mse, chi, v = se_moments(qhat, chihat, vhat, prior, params, opts)
        if prev is not None and d > 0.0:
            mse = (1.0 - d) * mse + d * prev[0]
            chi = (1.0 - d) * chi + d * prev[1]
            v = (1.0 - d) * v + d * prev[2]
        if infinite:
            v = 0.0
        state = SeState(mse, chi, v, qhat, chihat, vhat, f1, f2, t)
        if opts.record:
            traj.append((t, mse, chi, v, qhat, chihat, vhat, chihat / (qhat * qhat)))
        if not (math.isfinite(mse) and math.isfinite(v) and chi < CHI_LIMIT):
            raise DivergenceError(f"SE diverged at iteration {t}", state)
        if prev is not None and max(_rel(mse, prev[0]), _rel(chi, prev[1]),
                                    _rel(v, prev[2])) < opts.tol:
            return replace(state, converged=True, trajectory=traj)
        prev = (mse, chi, v)

        rm = poisson_moments(chi, mu_b)
        f1, f2 = rm.f1, rm.f2
        qhat = alpha * f1
        chihat = alpha * f1 * f1 * (mse + delta)
        # bootstrap noise: GAMP's per-realization field variance
        # alpha*f2*(E + v + delta) minus the shared part chihat
        vhat = 0.0 if infinite else alpha * (f2 * v + (f2 - f1 * f1) * (mse + delta))
        if not (qhat > 0.0 and math.isfinite(chihat) and math.isfinite(vhat)):
            raise DivergenceError(f"SE diverged at iteration {t}", state)
    return replace(state, trajectory=traj)


def se_variance(state: SeState) -> float:
    """Noise variance chihat / qhat^2 of the unbiased estimate h / qhat."""
    if not state.qhat > 0.0:
        raise InvalidArgument("state.qhat must be > 0")
    return state.chihat / (state.qhat * state.qhat)
