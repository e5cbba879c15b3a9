"""Closed-form scalar mathematics for the elastic-net denoiser.

Everything here is a pure function.  Functions accept scalars or numpy
arrays for the field ``h`` and broadcast; hyperparameters are scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, ndtr, owens_t

from .errors import InvalidArgument

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
POISSON_TAIL = 1e-16


@dataclass(frozen=True)
class DenoiserParams:
    """Elastic-net hyperparameters: strength ``lam`` and l1-ratio ``gamma``."""

    lam: float
    gamma: float

    def __post_init__(self):
        # lam = 0 is admitted: it is the linear (unregularized) denoiser.
        if not (math.isfinite(self.lam) and self.lam >= 0.0):
            raise InvalidArgument(f"lambda must be finite and >= 0, got {self.lam}")
        if not (0.0 <= self.gamma <= 1.0):
            raise InvalidArgument(f"gamma must lie in [0, 1], got {self.gamma}")

    @property
    def threshold(self) -> float:
        return self.lam * self.gamma

    @property
    def ridge(self) -> float:
        return self.lam * (1.0 - self.gamma)

    def slope_denominator(self, qhat: float) -> float:
        return qhat + self.ridge


@dataclass(frozen=True)
class ResamplingMoments:
    f1: float
    f2: float


@dataclass(frozen=True)
class SmoothedMoments:
    """E_eta of g, g**2 and g' at ``h + sqrt(vhat) * eta``."""

    m1: np.ndarray | float
    m2: np.ndarray | float
    mderiv: np.ndarray | float

    @property
    def variance(self):
        return self.m2 - np.square(self.m1)


def _check_qhat(qhat):
    if not (math.isfinite(qhat) and qhat > 0.0):
        raise InvalidArgument(f"qhat must be finite and > 0, got {qhat}")


def _check_h(h):
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise InvalidArgument("h must be finite")
    return h


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _phi(z):
    with np.errstate(over="ignore"):  # far tails: exp(-inf) = 0 is the right answer
        return _INV_SQRT_2PI * np.exp(-0.5 * np.square(z))


def _phi_s(z: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


def _cdf_s(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def denoise(h, qhat: float, params: DenoiserParams):
    """Elastic-net proximal map: soft threshold at lam*gamma, then shrink."""
    _check_qhat(qhat)
    h = _check_h(h)
    theta = params.threshold
    out = np.where(np.abs(h) <= theta, 0.0,
                   (h - np.sign(h) * theta) / params.slope_denominator(qhat))
    return _scalar_or_array(out)


def denoise_deriv(h, qhat: float, params: DenoiserParams):
    _check_qhat(qhat)
    h = _check_h(h)
    out = np.where(np.abs(h) <= params.threshold, 0.0,
                   1.0 / params.slope_denominator(qhat))
    return _scalar_or_array(out)


def _upper_tail_moments(mean, sd, theta):
    """P, E[(u-theta)+], E[(u-theta)+**2] for u ~ N(mean, sd**2), sd > 0."""
    d = mean - theta
    z = d / sd
    cdf = ndtr(z)
    pdf = _phi(z)
    first = d * cdf + sd * pdf
    second = (d * d + sd * sd) * cdf + d * sd * pdf
    return cdf, first, second


def smoothed_moments(h, vhat: float, qhat: float,
                     params: DenoiserParams) -> SmoothedMoments:
    """Gaussian-smoothed denoiser statistics in closed form.

    With ``u = h + sqrt(vhat) * eta`` the denoiser is linear on each of the
    two active half-lines, so its moments are truncated-Gaussian moments.
    ``ndtr`` is erfc-based and stays accurate deep in the tails.
    """
    _check_qhat(qhat)
    if not (math.isfinite(vhat) and vhat >= 0.0):
        raise InvalidArgument(f"vhat must be finite and >= 0, got {vhat}")
    h = _check_h(h)
    if vhat == 0.0:
        m1 = denoise(h, qhat, params)
        return SmoothedMoments(m1, np.square(m1) if np.ndim(m1) else m1 * m1,
                               denoise_deriv(h, qhat, params))
    sd = math.sqrt(vhat)
    theta = params.threshold
    denom = params.slope_denominator(qhat)
    p_up, e1_up, e2_up = _upper_tail_moments(h, sd, theta)
    # mirror the lower region u < -theta onto an upper tail of -u
    p_lo, e1_lo, e2_lo = _upper_tail_moments(-h, sd, theta)
    m1 = (e1_up - e1_lo) / denom
    m2 = (e2_up + e2_lo) / (denom * denom)
    md = (p_up + p_lo) / denom
    return SmoothedMoments(_scalar_or_array(m1), _scalar_or_array(m2),
                           _scalar_or_array(md))


def _relu_product_mean(a: float, r: float) -> float:
    """E[(X-a)+ (Y-a)+] for standard bivariate normal (X, Y), corr(X, Y) = r.

    Requires a >= 0.
    """
    if r >= 1.0:
        return (1.0 + a * a) * _cdf_s(-a) - a * _phi_s(a)
    if r <= -1.0:
        return 0.0
    s = math.sqrt((1.0 - r) * (1.0 + r))
    k = math.sqrt((1.0 - r) / (1.0 + r))
    both_above = _cdf_s(-a) - 2.0 * float(owens_t(a, k))
    q = _cdf_s(-a * k)
    joint = s * _INV_SQRT_2PI * _phi_s(a * math.sqrt(2.0 / (1.0 + r)))
    return (r + a * a) * both_above - 2.0 * a * _phi_s(a) * q + joint


@dataclass(frozen=True)
class CenteredAverages:
    """Averages over h ~ N(0, field_var) of the smoothed moments.

    ``m1_sq`` is E_h[m1(h)**2], ``m2`` is E_h[m2(h)], ``mderiv`` is E_h[md(h)].
    """

    m1_sq: float
    m2: float
    mderiv: float


def centered_averages(field_var: float, vhat: float, qhat: float,
                      params: DenoiserParams) -> CenteredAverages:
    """Closed-form E_h of the smoothed moments for a centered Gaussian field.

    ``u = h + sqrt(vhat) eta`` is N(0, field_var + vhat); the two-copy
    average E[m1**2] = E[g(u1) g(u2)] has corr(u1, u2) = field_var / total.
    """
    _check_qhat(qhat)
    if field_var < 0.0 or vhat < 0.0:
        raise InvalidArgument("variances must be >= 0")
    total = field_var + vhat
    theta = params.threshold
    denom = params.slope_denominator(qhat)
    if total == 0.0:
        return CenteredAverages(0.0, 0.0, 0.0)
    tau = math.sqrt(total)
    a = theta / tau
    tail = _cdf_s(-a)
    p_active = 2.0 * tail
    m2 = 2.0 * ((theta * theta + total) * tail - theta * tau * _phi_s(a))
    m2 /= denom * denom
    if vhat == 0.0:
        m1_sq = m2
    else:
        r = field_var / total
        m1_sq = 2.0 * total * (_relu_product_mean(a, r) - _relu_product_mean(a, -r))
        m1_sq /= denom * denom
    return CenteredAverages(m1_sq, m2, p_active / denom)


# A response this large means the estimate is numerically undetermined
# (e.g. ridgeless fits with fewer samples than features).
CHI_LIMIT = 1e15


@lru_cache(maxsize=4096)
def poisson_window(mu_b: float) -> tuple[np.ndarray, np.ndarray]:
    """Support points and pmf of Poisson(mu_b) carrying all but ~1e-16 mass."""
    upper = int(math.ceil(mu_b + 12.0 * math.sqrt(mu_b) + 20.0))
    lower = max(0, int(math.floor(mu_b - 12.0 * math.sqrt(mu_b) - 20.0)))
    c = np.arange(lower, upper + 1, dtype=float)
    pmf = np.exp(c * math.log(mu_b) - mu_b - gammaln(c + 1.0))
    # cut the right tail at the smallest K with remaining mass below POISSON_TAIL
    tail = np.cumsum(pmf[::-1])[::-1]
    keep = np.nonzero(tail >= POISSON_TAIL)[0]
    stop = keep[-1] + 1 if keep.size else c.size
    c, pmf = c[:stop], pmf[:stop]
    c.flags.writeable = False
    pmf.flags.writeable = False
    return c, pmf


def poisson_moments(chi: float, mu_b: float) -> ResamplingMoments:
    """E_c of r/(1+r*chi) and its square, r = c/mu_b, c ~ Poisson(mu_b).

    ``mu_b = inf`` is the deterministic limit r = 1.
    """
    if not (chi >= 0.0 and math.isfinite(chi)):
        raise InvalidArgument(f"chi must be finite and >= 0, got {chi}")
    if not mu_b > 0.0:
        raise InvalidArgument(f"mu_b must be > 0, got {mu_b}")
    if math.isinf(mu_b):
        f1 = 1.0 / (1.0 + chi)
        return ResamplingMoments(f1, f1 * f1)
    c, pmf = poisson_window(mu_b)
    r = c / mu_b
    term = r / (1.0 + r * chi)
    return ResamplingMoments(float(pmf @ term), float(pmf @ (term * term)))
