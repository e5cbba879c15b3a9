"""AMP with resampling (AMPR) for the elastic net.

One run computes Poisson-bootstrap averages of the elastic-net estimator.
At its fixed point ``h / qhat`` is an unbiased, Gaussian-noise-corrupted
copy of the true signal, and per-coordinate bootstrap statistics follow
from the Gaussian-smoothed denoiser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, InvalidArgument
from .scalar_kernels import CHI_LIMIT, DenoiserParams, poisson_moments, smoothed_moments
from .synthetic_data import ProblemInstance


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 1000
    tol: float = 1e-8
    damping: float = 0.0
    init_qhat: float = 1.0
    init_vhat: float = 1.0
    init_h: np.ndarray | None = None
    record: bool = False
    stall_window: int = 50

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")
        if not self.tol > 0.0:
            raise InvalidArgument("tol must be > 0")
        if not 0.0 <= self.damping < 1.0:
            raise InvalidArgument("damping must lie in [0, 1)")
        if self.stall_window < 0:
            raise InvalidArgument("stall_window must be >= 0 (0 disables the guard)")
        if not (self.init_qhat > 0.0 and self.init_vhat >= 0.0):
            raise InvalidArgument("init_qhat must be > 0 and init_vhat >= 0")


@dataclass(frozen=True, eq=False)
class AmprState:
    h: np.ndarray
    a: np.ndarray
    w_hat: np.ndarray
    qhat: float
    vhat: float
    chi: float
    v: float
    f1: float
    f2: float
    iter: int
    converged: bool = False
    trajectory: list = field(default_factory=list, repr=False)


# Per-iteration record; mse uses the true signal and is a diagnostic only.
TRAJECTORY_COLUMNS = ("t", "mse", "chi", "v", "qhat", "vhat", "sigma2")


@dataclass(frozen=True, eq=False)
class UnbiasedEstimate:
    r_hat: np.ndarray
    sigma2: float
    vhat_over_qhat2: float


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-12))


class StallGuard:
    """Raises the damping of iterations that oscillate instead of converging.

    An undamped run whose step size has not halved for ``window`` iterations
    gets damping ``1 - 0.7 (1 - d)``, up to ``MAX_DAMPING``. Damping leaves
    fixed points unchanged, and runs that converge steadily never trigger it.
    Tracks ``size`` independent columns (one by default).
    """

    MAX_DAMPING = 0.9

    def __init__(self, damping: float, window: int, size: int = 1):
        shape = (size,)
        self.damping = np.full(shape, float(damping))
        self.window = window
        self.best = np.full(shape, np.inf)
        self.since = np.zeros(shape, dtype=int)

    def update(self, change, live=slice(None)):
        if not self.window:
            return
        change = np.asarray(change, float)
        best, since = self.best[live], self.since[live]
        improved = change < 0.5 * best
        best = np.where(improved, change, best)
        since = np.where(improved, 0, since + 1)
        stalled = since >= self.window
        if np.any(stalled):
            d = self.damping[live]
            self.damping[live] = np.where(
                stalled, np.minimum(1.0 - 0.7 * (1.0 - d), self.MAX_DAMPING), d)
            best = np.where(stalled, change, best)
            since = np.where(stalled, 0, since)
        self.best[live], self.since[live] = best, since


def _finite(*arrays) -> bool:
    return all(np.all(np.isfinite(x)) for x in arrays)


def run_ampr(instance: ProblemInstance, params: DenoiserParams, mu_b: float,
             opts: SolverOptions = SolverOptions()) -> AmprState:
    """Iterate AMPR until the estimate stops moving.

    ``mu_b = inf`` reduces to plain GAMP; the bootstrap noise ``vhat`` is then
    started (and stays) at zero whatever ``opts.init_vhat`` says.
    """
    if not mu_b > 0.0:
        raise InvalidArgument(f"mu_b must be > 0, got {mu_b}")
    x, y = instance.x_matrix, instance.y
    m, n = x.shape
    alpha_n = m / n
    guard = StallGuard(opts.damping, opts.stall_window)

    h = np.zeros(n) if opts.init_h is None else np.asarray(opts.init_h, float).copy()
    if h.shape != (n,):
        raise InvalidArgument(f"init_h must have shape ({n},)")
    qhat = opts.init_qhat
    vhat = 0.0 if math.isinf(mu_b) else opts.init_vhat
    a = np.zeros(m)
    f1 = f2 = float("nan")

    sm = smoothed_moments(h, vhat, qhat, params)
    w_hat = sm.m1
    last = None
    traj = []
    for t in range(opts.max_iters):
        chi = float(np.mean(sm.mderiv))
        v = max(float(np.mean(sm.m2 - np.square(sm.m1))), 0.0)
        if opts.record:
            traj.append((t, float(np.mean((w_hat - instance.w0) ** 2)), chi, v, qhat, vhat,
                         alpha_n * float(np.mean(a * a)) / (qhat * qhat)))
        state = AmprState(h, a, w_hat, qhat, vhat, chi, v, f1, f2, t, trajectory=traj)
        if not (chi < CHI_LIMIT and math.isfinite(v) and _finite(w_hat)):
            raise DivergenceError(f"AMPR diverged at iteration {t}", last)
        if last is not None:
            change = relative_change(w_hat, last.w_hat)
            if change < opts.tol:
                return replace(state, converged=True)
            guard.update(change)
        last = state
        d = float(guard.damping[0])

        rm = poisson_moments(chi, mu_b)
        f1, f2 = rm.f1, rm.f2
        qhat_new = alpha_n * f1
        a_new = f1 * (y - x @ w_hat + chi * a)
        h_new = x.T @ a_new + qhat_new * w_hat
        if d > 0.0:
            a_new = (1.0 - d) * a_new + d * a
            h_new = (1.0 - d) * h_new + d * h
        if math.isinf(mu_b):
            vhat_new = 0.0
        else:
            vhat_new = alpha_n * (f2 * v + (f2 - f1 * f1) / (f1 * f1) * float(np.mean(a_new * a_new)))
        if not (_finite(a_new, h_new) and 0.0 < qhat_new < math.inf and math.isfinite(vhat_new)):
            raise DivergenceError(f"AMPR diverged at iteration {t + 1}", state)

        h, a, qhat, vhat = h_new, a_new, qhat_new, vhat_new
        sm = smoothed_moments(h, vhat, qhat, params)
        w_new = sm.m1
        if d > 0.0:
            w_new = (1.0 - d) * w_new + d * w_hat
        w_hat = w_new

    chi = float(np.mean(sm.mderiv))
    v = max(float(np.mean(sm.m2 - np.square(sm.m1))), 0.0)
    converged = last is not None and relative_change(w_hat, last.w_hat) < opts.tol
    return AmprState(h, a, w_hat, qhat, vhat, chi, v, f1, f2, opts.max_iters, converged, traj)


def unbiased_estimate(state: AmprState, alpha: float) -> UnbiasedEstimate:
    """``h / qhat`` and its noise variance estimated from residuals alone."""
    if not state.qhat > 0.0:
        raise InvalidArgument("state.qhat must be > 0")
    q2 = state.qhat * state.qhat
    return UnbiasedEstimate(state.h / state.qhat,
                            alpha * float(np.mean(state.a * state.a)) / q2,
                            state.vhat / q2)


PSI = {
    "identity": lambda sm: sm.m1,
    "square": lambda sm: sm.m2,
}


def bootstrap_statistics(state: AmprState, psi: str,
                         params: DenoiserParams) -> np.ndarray:
    """Per-coordinate bootstrap expectation of psi(w*), from the fixed point."""
    try:
        pick = PSI[psi]
    except KeyError:
        raise InvalidArgument(f"unsupported psi {psi!r}; choose from {sorted(PSI)}") from None
    return np.asarray(pick(smoothed_moments(state.h, state.vhat, state.qhat, params)))
