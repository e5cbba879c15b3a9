import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amprlab.errors import InvalidArgument
from amprlab.scalar_kernels import (DenoiserParams, centered_averages, denoise, denoise_deriv,
                                    poisson_moments, poisson_window, smoothed_moments)
from oracles import gauss_expect, poisson_oracle, smoothed_oracle

P = DenoiserParams(0.5, 0.5)


# -- pointwise denoiser -------------------------------------------------------

@pytest.mark.parametrize("h, expected", [(0.2, 0.0), (1.0, 0.6), (-1.0, -0.6)])
def test_denoise_examples(h, expected):
    assert denoise(h, 1.0, P) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("h, qhat, lam, gamma, expected", [
    (0.1, 1.0, 0.5, 0.5, 0.0),
    (1.0, 1.0, 0.5, 0.5, 0.8),
    (1.0, 2.0, 0.5, 1.0, 0.5),
])
def test_denoise_deriv_examples(h, qhat, lam, gamma, expected):
    assert denoise_deriv(h, qhat, DenoiserParams(lam, gamma)) == pytest.approx(expected, abs=1e-15)


def test_threshold_tie_goes_to_zero():
    assert denoise(0.25, 1.0, P) == 0.0
    assert denoise_deriv(-0.25, 1.0, P) == 0.0


@given(st.floats(-50, 50), st.floats(0.01, 10), st.floats(0, 5), st.floats(0, 1))
def test_denoise_odd_and_derivative_even(h, qhat, lam, gamma):
    p = DenoiserParams(lam, gamma)
    assert denoise(-h, qhat, p) == -denoise(h, qhat, p)
    assert denoise_deriv(-h, qhat, p) == denoise_deriv(h, qhat, p)


@pytest.mark.parametrize("bad", [dict(h=math.nan, qhat=1.0), dict(h=1.0, qhat=0.0),
                                 dict(h=math.inf, qhat=1.0), dict(h=1.0, qhat=-2.0)])
def test_denoise_rejects_bad_input(bad):
    with pytest.raises(InvalidArgument):
        denoise(bad["h"], bad["qhat"], P)
    with pytest.raises(InvalidArgument):
        denoise_deriv(bad["h"], bad["qhat"], P)


@pytest.mark.parametrize("lam, gamma", [(-0.1, 0.5), (math.inf, 0.5), (0.1, 1.5), (0.1, -0.1)])
def test_params_validation(lam, gamma):
    with pytest.raises(InvalidArgument):
        DenoiserParams(lam, gamma)


# -- Gaussian-smoothed moments ------------------------------------------------

def test_smoothed_at_zero_vhat_is_pointwise():
    sm = smoothed_moments(0.7, 0.0, 1.0, P)
    assert (sm.m1, sm.m2, sm.mderiv) == pytest.approx((0.36, 0.1296, 0.8), abs=1e-15)


@pytest.mark.parametrize("h", [-2.0, 0.0, 0.4, 3.0])
def test_smoothed_linear_denoiser(h):
    sm = smoothed_moments(h, 0.3, 1.0, DenoiserParams(0.0, 0.0))
    assert sm.m1 == pytest.approx(h, abs=1e-14)
    assert sm.m2 == pytest.approx(h * h + 0.3, abs=1e-14)
    assert sm.mderiv == pytest.approx(1.0, abs=1e-15)


def test_smoothed_matches_quadrature_example():
    got = smoothed_moments(0.5, 0.2, 1.0, P)
    want = smoothed_oracle(0.5, 0.2, 1.0, 0.5, 0.5)
    assert (got.m1, got.m2, got.mderiv) == pytest.approx(want, abs=1e-10)


def test_smoothed_random_grid_against_quadrature():
    rng = np.random.default_rng(20240501)
    worst = 0.0
    for _ in range(1000):
        h = rng.uniform(-5, 5)
        vhat = 10 ** rng.uniform(-4, 0.6)
        qhat = 10 ** rng.uniform(-1.3, 0.7)
        lam, gamma = rng.uniform(0, 3), rng.uniform(0, 1)
        sm = smoothed_moments(h, vhat, qhat, DenoiserParams(lam, gamma))
        ref = smoothed_oracle(h, vhat, qhat, lam, gamma)
        for got, want in zip((sm.m1, sm.m2, sm.mderiv), ref):
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    assert worst <= 1e-9


def test_smoothed_vectorized_matches_scalar():
    h = np.linspace(-3, 3, 41)
    vec = smoothed_moments(h, 0.4, 0.8, P)
    for i, hi in enumerate(h):
        one = smoothed_moments(float(hi), 0.4, 0.8, P)
        assert vec.m1[i] == pytest.approx(one.m1, abs=1e-15)
        assert vec.mderiv[i] == pytest.approx(one.mderiv, abs=1e-15)


@pytest.mark.parametrize("h", [-1.3, -0.25, 0.1, 0.26, 2.0])
def test_smoothed_tends_to_pointwise(h):
    sm = smoothed_moments(h, 1e-14, 1.0, P)
    assert sm.m1 == pytest.approx(denoise(h, 1.0, P), abs=1e-7)
    assert sm.m2 == pytest.approx(denoise(h, 1.0, P) ** 2, abs=1e-7)


def test_smoothed_far_tail_is_stable():
    # |h|/sqrt(vhat) far beyond 8: the active-region probability is ~1 or ~0
    sm = smoothed_moments(40.0, 0.01, 1.0, P)
    assert sm.m1 == pytest.approx(denoise(40.0, 1.0, P), rel=1e-14)
    assert sm.mderiv == pytest.approx(0.8, rel=1e-14)
    inside = smoothed_moments(0.0, 1e-4, 1.0, DenoiserParams(2.0, 1.0))
    assert inside.m1 == 0.0 and 0.0 <= inside.m2 < 1e-300


def test_smoothed_rejects_negative_vhat():
    with pytest.raises(InvalidArgument):
        smoothed_moments(0.1, -1e-3, 1.0, P)


@settings(max_examples=300)
@given(st.floats(-20, 20), st.floats(0, 10), st.floats(0.01, 10), st.floats(0, 5),
       st.floats(0, 1))
def test_smoothed_moment_bounds(h, vhat, qhat, lam, gamma):
    p = DenoiserParams(lam, gamma)
    sm = smoothed_moments(h, vhat, qhat, p)
    assert sm.m2 - sm.m1 ** 2 >= -1e-12 * max(1.0, sm.m2)
    assert -1e-15 <= sm.mderiv <= 1.0 / p.slope_denominator(qhat) * (1 + 1e-12)


@pytest.mark.parametrize("field_var, vhat, qhat, lam, gamma", [
    (0.3, 0.1, 1.0, 0.5, 0.5), (2.0, 0.0, 0.7, 0.2, 1.0), (0.05, 1.5, 2.0, 1.0, 0.3),
    (1.0, 0.2, 0.5, 0.0, 0.0),
])
def test_centered_averages_against_nested_quadrature(field_var, vhat, qhat, lam, gamma):
    params = DenoiserParams(lam, gamma)
    got = centered_averages(field_var, vhat, qhat, params)

    def inner(h):
        if vhat == 0.0:
            g, dg = denoise(h, qhat, params), denoise_deriv(h, qhat, params)
            return np.array([g * g, g * g, dg])
        m1, m2, md = smoothed_oracle(h, vhat, qhat, lam, gamma)
        return np.array([m1 * m1, m2, md])

    kinks = (-params.threshold, params.threshold) if vhat == 0.0 else ()
    want = gauss_expect(inner, math.sqrt(field_var), kinks)
    assert (got.m1_sq, got.m2, got.mderiv) == pytest.approx(tuple(want), abs=1e-9)


# -- Poisson resampling moments -----------------------------------------------

def test_poisson_infinite_mu():
    rm = poisson_moments(1.0, math.inf)
    assert (rm.f1, rm.f2) == (0.5, 0.25)


def test_poisson_zero_chi():
    rm = poisson_moments(0.0, 2.0)
    assert rm.f1 == pytest.approx(1.0, abs=1e-14)
    assert rm.f2 == pytest.approx(1.5, abs=1e-14)


@pytest.mark.parametrize("chi, mu_b", [(0.5, 1.0), (0.0, 0.01), (3.0, 0.3), (0.2, 7.5),
                                       (10.0, 40.0), (1e-3, 250.0), (4.5, 0.5)])
def test_poisson_against_series_oracle(chi, mu_b):
    rm = poisson_moments(chi, mu_b)
    f1, f2 = poisson_oracle(chi, mu_b)
    assert abs(rm.f1 - f1) <= 1e-12
    assert abs(rm.f2 - f2) <= 1e-12


def test_poisson_window_tail_mass():
    c, pmf = poisson_window(3.0)
    assert c[0] == 0 and 1.0 - pmf.sum() < 1e-15
    assert not pmf.flags.writeable


@settings(max_examples=200)
@given(st.floats(0, 50), st.floats(0, 50), st.floats(0.01, 200))
def test_poisson_jensen_and_monotone(chi_a, chi_b, mu_b):
    lo, hi = sorted((chi_a, chi_b))
    a, b = poisson_moments(lo, mu_b), poisson_moments(hi, mu_b)
    assert a.f1 ** 2 <= a.f2 * (1 + 1e-12)
    assert b.f1 <= a.f1 * (1 + 1e-13) and b.f2 <= a.f2 * (1 + 1e-13)


@pytest.mark.parametrize("chi", [0.0, 0.5, 3.0])
def test_poisson_large_mu_approaches_limit(chi):
    near = poisson_moments(chi, 1e6)
    limit = poisson_moments(chi, math.inf)
    assert abs(near.f1 - limit.f1) < 1e-3 and abs(near.f2 - limit.f2) < 1e-3


@pytest.mark.parametrize("chi, mu_b", [(-0.1, 1.0), (math.nan, 1.0), (0.5, 0.0), (0.5, -1.0)])
def test_poisson_rejects_bad_input(chi, mu_b):
    with pytest.raises(InvalidArgument):
        poisson_moments(chi, mu_b)
