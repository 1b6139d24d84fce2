import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import CubicSpline

from fpguide.schedule import (
    NoiseSchedule,
    ScheduleError,
    build_linear_beta_schedule,
    ode_coefficients,
    ode_coefficients_from_alpha_bar,
    schedule_csv,
    scaled_linear_schedule,
    xi,
    xi_tilde,
)


def test_constant_beta_two_steps():
    s = build_linear_beta_schedule(2, 0.5, 0.5)
    np.testing.assert_allclose(s.alpha, [0.5, 0.5])
    np.testing.assert_allclose(s.alpha_bar, [0.5, 0.25])
    assert s.abar(0) == 1.0


def test_ddpm_1000_final_alpha_bar_matches_plain_product():
    s = build_linear_beta_schedule(1000, 1e-4, 0.02)
    # oracle: plain float loop, no numpy
    betas = [1e-4 + (0.02 - 1e-4) * i / 999 for i in range(1000)]
    expected = math.prod(1.0 - b for b in betas)
    assert s.abar(1000) == pytest.approx(expected, rel=1e-10)
    assert s.abar(1000) == pytest.approx(4.04e-5, rel=5e-3)


@pytest.mark.parametrize(
    "T, lo, hi",
    [(2, 0.5, 1.5), (1, 0.1, 0.2), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0)],
)
def test_invalid_schedules_rejected(T, lo, hi):
    with pytest.raises(ScheduleError):
        build_linear_beta_schedule(T, lo, hi)


def test_alpha_outside_unit_interval_rejected():
    with pytest.raises(ScheduleError):
        NoiseSchedule([0.5, 1.0])


def test_timestep_range_checked():
    s = build_linear_beta_schedule(10, 0.01, 0.1)
    with pytest.raises(ScheduleError):
        xi(s, 0)
    with pytest.raises(ScheduleError):
        xi(s, 11)
    with pytest.raises(ScheduleError):
        xi_tilde(s, 11)


def test_xi_direct_evaluation():
    s = build_linear_beta_schedule(2, 0.5, 0.5)
    # t = 2: alpha = 0.5, abar = 0.25
    assert xi(s, 2) == pytest.approx(math.sqrt(0.75) - math.sqrt(0.25), abs=1e-15)
    assert xi(s, 2) == pytest.approx(0.3660254037844386, abs=1e-15)


def test_xi_tilde_values():
    s = NoiseSchedule.from_alpha_bar([0.75, 0.19])
    assert xi_tilde(s, 0) == 0.0
    assert xi_tilde(s, 1) == pytest.approx(0.5, abs=1e-15)
    assert xi_tilde(s, 2) == pytest.approx(0.9, abs=1e-15)


def test_xi_vanishes_as_alpha_bar_goes_to_one():
    s = build_linear_beta_schedule(10, 1e-9, 1e-8)
    assert xi(s, 1) < 1e-4


def test_xi_below_xi_tilde_on_grid(ddpm1000):
    # at t = 1, alpha_1 = abar_1 so the two strengths coincide
    assert xi(ddpm1000, 1) == pytest.approx(xi_tilde(ddpm1000, 1), abs=1e-15)
    for t in range(2, 1001):
        assert xi(ddpm1000, t) < xi_tilde(ddpm1000, t)


def test_flat_alpha_bar_has_zero_coefficients():
    ode = ode_coefficients_from_alpha_bar(np.full(20, 0.3))
    np.testing.assert_array_equal(ode.lambda_t[1:-1], 0.0)
    np.testing.assert_array_equal(ode.mu_t[1:-1], 0.0)


def test_ode_coefficients_against_spline_oracle(ddpm1000):
    # oracle: analytic derivative of a cubic spline through log(abar)
    t = np.arange(1, 1001)
    spline = CubicSpline(t, np.log(ddpm1000.alpha_bar))
    t0 = 500
    ab = ddpm1000.abar(t0)
    dab = spline(t0, 1) * ab
    lam = np.sqrt(ab) * (-dab) / (2.0 * np.sqrt((1.0 - ab) / ab) * ab**2)
    mu = 0.5 * np.sqrt(ab) * ab**-1.5 * dab
    ode = ode_coefficients(ddpm1000)
    assert ode.lam(t0) == pytest.approx(lam, rel=1e-3)
    assert ode.mu(t0) == pytest.approx(mu, rel=1e-3)


def test_ode_coefficients_exponential_alpha_bar():
    # abar(t) = exp(-c t): lambda = c e^{ct} sqrt(abar) / (2 sqrt(e^{ct} - 1)), mu = -c/2
    c = 0.01
    t = np.arange(1, 1001, dtype=float)
    ab = np.exp(-c * t)
    ode = ode_coefficients_from_alpha_bar(ab)
    lam = c * np.exp(c * t) * np.sqrt(ab) / (2.0 * np.sqrt(np.expm1(c * t)))
    # unit-step central differences resolve the sqrt(t) kink only away from t = 0
    interior = slice(11, -1)
    np.testing.assert_allclose(ode.lambda_t[interior], lam[interior], rtol=1e-3)
    np.testing.assert_allclose(ode.mu_t[interior], -c / 2, rtol=1e-3)


def test_lambda_positive_on_decreasing_schedules(ddpm1000):
    assert np.all(ode_coefficients(ddpm1000).lambda_t > 0)
    assert np.all(ode_coefficients(scaled_linear_schedule(60)).lambda_t > 0)


def test_scaled_schedule_reaches_noise():
    for T in (50, 60, 100):
        s = scaled_linear_schedule(T)
        assert s.abar(T) < 1e-3


def test_schedule_csv_columns():
    text = schedule_csv(build_linear_beta_schedule(4, 0.1, 0.2), header_comment="hdr")
    lines = text.splitlines()
    assert lines[0] == "# hdr"
    assert lines[1] == "t,alpha,alpha_bar,xi,xi_tilde,lambda,mu"
    assert len(lines) == 6
    assert float(lines[2].split(",")[1]) == 0.9


@settings(max_examples=100, deadline=None)
@given(
    T=st.integers(2, 300),
    lo=st.floats(1e-6, 0.3),
    span=st.floats(0.0, 0.6),
)
def test_schedule_invariants(T, lo, span):
    hi = min(lo + span, 0.9)
    s = build_linear_beta_schedule(T, lo, hi)
    ab = s.alpha_bar_full
    assert np.all(np.diff(ab) < 0)
    assert np.all((s.alpha_bar > 0) & (s.alpha_bar < 1))
    np.testing.assert_allclose(ab[1:], s.alpha * ab[:-1], rtol=1e-12, atol=0)
    for t in range(1, T + 1):
        assert 0.0 <= xi(s, t) <= xi_tilde(s, t)
    ode = ode_coefficients(s)
    assert np.all(np.isfinite(ode.lambda_t)) and np.all(np.isfinite(ode.mu_t))
