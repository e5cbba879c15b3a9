"""Distributional checks on solver outputs: Q-Q tables, scatter fits, decoupling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import kstest, norm

from .ampr import AmprState
from .errors import DegenerateSample, InvalidArgument
from .scalar_kernels import DenoiserParams, centered_averages, smoothed_moments
from .state_evolution import SeState
from .synthetic_data import ProblemInstance, SignalPrior

CENTRAL_FRACTION = 0.98


@dataclass(frozen=True, eq=False)
class QqTable:
    theoretical: np.ndarray
    sample: np.ndarray
    slope: float
    intercept: float
    ks_statistic: float


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float


def fit_line(x, y) -> LineFit:
    """Ordinary least squares y ~ slope * x + intercept."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise DegenerateSample("regressor is constant")
    slope = float(xc @ (y - y.mean())) / sxx
    return LineFit(slope, float(y.mean() - slope * x.mean()))


def qq_against_normal(sample, variance: float) -> QqTable:
    """Sorted sample against N(0, variance) quantiles at (i - 0.5)/n.

    The slope/intercept fit uses the central 98% of the points only.
    """
    sample = np.asarray(sample, dtype=float).ravel()
    n = sample.size
    if n < 100:
        raise InvalidArgument(f"need at least 100 points, got {n}")
    if not variance > 0.0:
        raise InvalidArgument("variance must be > 0")
    if np.ptp(sample) == 0.0:
        raise DegenerateSample("sample is constant")
    sd = math.sqrt(variance)
    theo = sd * ndtri((np.arange(1, n + 1) - 0.5) / n)
    ordered = np.sort(sample)
    cut = int(round(n * (1.0 - CENTRAL_FRACTION) / 2.0))
    core = slice(cut, n - cut)
    fit = fit_line(theo[core], ordered[core])
    ks = float(kstest(sample, norm(scale=sd).cdf).statistic)
    return QqTable(theo, ordered, fit.slope, fit.intercept, ks)


DECOUPLING_SELECTORS = ("identity,identity", "square,identity", "identity,square")


def decoupling_check(state: AmprState, instance: ProblemInstance, se: SeState,
                     params: DenoiserParams, prior: SignalPrior,
                     selector: str = "identity,identity") -> tuple[float, float]:
    """Empirical average over coordinates vs its SE prediction.

    ``selector`` is "phi,psi": the left side is mean_i phi(E_eta psi(g)) at
    h_i from the run; the right side averages the same over the effective
    field qhat*w0 + sqrt(chihat)*xi of the SE fixed point.  The left side
    uses only (h, qhat, vhat), never the true signal.
    """
    if selector not in DECOUPLING_SELECTORS:
        raise InvalidArgument(f"unsupported selector {selector!r}; choose from {DECOUPLING_SELECTORS}")
    if state.h.shape != (instance.n,):
        raise InvalidArgument("state does not belong to this instance")
    phi, psi = selector.split(",")
    sm = smoothed_moments(state.h, state.vhat, state.qhat, params)
    inner = sm.m1 if psi == "identity" else sm.m2
    lhs = float(np.mean(inner if phi == "identity" else inner * inner))

    zero = centered_averages(se.chihat, se.vhat, se.qhat, params)
    gauss = centered_averages(se.qhat ** 2 + se.chihat, se.vhat, se.qhat, params)
    rho = prior.rho
    if selector == "identity,identity":
        rhs = 0.0  # m1 is odd and the effective field is symmetric
    elif selector == "square,identity":
        rhs = (1.0 - rho) * zero.m1_sq + rho * gauss.m1_sq
    else:
        rhs = (1.0 - rho) * zero.m2 + rho * gauss.m2
    return lhs, float(rhs)
