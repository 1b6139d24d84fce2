import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gaussian_pair, standard_normal, two_component
from oracles import fd_score_1d, posterior_mean_1d
from fpguide.model import (
    ConditionalGMM,
    GMMPredictor,
    Latent,
    ModelError,
    eps,
    eps_array,
    forward_noise,
    log_density,
    marginal_params,
    posterior_mean,
    sample_x0,
    sample_xT,
)
from fpguide.schedule import NoiseSchedule, scaled_linear_schedule


def test_marginal_at_alpha_bar_one_is_data(sched50):
    m = two_component()
    w, mu, var = marginal_params(m, sched50, 0)
    np.testing.assert_array_equal(mu, m.means)
    np.testing.assert_array_equal(var, m.variances)
    np.testing.assert_array_equal(w, m.weights)


def test_standard_normal_marginal_is_invariant(sched50):
    for t in (1, 17, 50):
        _, mu, var = marginal_params(standard_normal(), sched50, t)
        np.testing.assert_allclose(mu, 0.0)
        np.testing.assert_allclose(var, 1.0, rtol=1e-15)


def test_two_component_marginal_at_quarter():
    s = NoiseSchedule.from_alpha_bar([0.5, 0.25])
    m = ConditionalGMM([0.5, 0.5], [[-2.0], [2.0]], [1.0, 1.0], {"c0": [1.0, 0.0]})
    w, mu, var = marginal_params(m, s, 2, "c0")
    np.testing.assert_allclose(mu.ravel(), [-1.0, 1.0])
    np.testing.assert_allclose(var, [1.0, 1.0])
    np.testing.assert_array_equal(w, [1.0, 0.0])


def test_eps_standard_normal_closed_form():
    s = NoiseSchedule.from_alpha_bar([0.6, 0.36])
    e = eps(standard_normal(), s, Latent([2.0], 2))
    np.testing.assert_allclose(e, [1.6], rtol=1e-14)


def test_eps_standard_normal_monte_carlo_posterior(rng):
    # oracle: self-normalized importance sampling of E[x0 | xt] under the prior
    ab, xt = 0.36, 2.0
    s = NoiseSchedule.from_alpha_bar([0.6, ab])
    x0 = rng.standard_normal(400_000)
    logw = -0.5 * (xt - np.sqrt(ab) * x0) ** 2 / (1.0 - ab)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    post = np.sum(w * x0)
    se = np.sqrt(np.sum(w**2 * (x0 - post) ** 2))
    eps_mc = (xt - np.sqrt(ab) * post) / np.sqrt(1.0 - ab)
    e = eps(standard_normal(), s, Latent([xt], 2))[0]
    assert abs(e - eps_mc) < 4 * se * np.sqrt(ab) / np.sqrt(1.0 - ab)


def test_eps_vanishes_at_symmetric_midpoint(sched50):
    m = two_component()
    for t in (1, 10, 25, 50):
        assert eps_array(m, sched50, np.zeros(1), t)[0] == 0.0


def test_condition_equal_to_unconditional_collapses(mix_pred, rng):
    x = rng.normal(scale=3.0, size=(200, 1))
    for t in (1, 20, 50):
        np.testing.assert_array_equal(mix_pred.eps(x, t, "same"), mix_pred.eps(x, t, None))


def test_eps_rejects_bad_inputs(mix_pred):
    with pytest.raises(ModelError):
        mix_pred.eps(np.zeros(1), 0)
    with pytest.raises(ModelError):
        mix_pred.eps(np.zeros(1), 3, "nope")


def test_score_matches_finite_differences(sched100):
    m = two_component()
    xs = np.linspace(-4.0, 4.0, 50)
    for t in (1, 10, 37, 70, 100):
        for c in (None, "c0"):
            ab = sched100.abar(t)
            fd = fd_score_1d(xs, ab, m.weights_for(c), m.means, m.variances)
            score = -eps_array(m, sched100, xs[:, None], t, c)[:, 0] / np.sqrt(1.0 - ab)
            np.testing.assert_allclose(score, fd, rtol=1e-6)


def test_posterior_mean_matches_bayes(sched100):
    m = two_component()
    xs = np.linspace(-5.0, 5.0, 41)
    for t in (1, 30, 90):
        ab = sched100.abar(t)
        ref = posterior_mean_1d(xs, ab, m.weights, m.means, m.variances)
        np.testing.assert_allclose(posterior_mean(m, sched100, xs[:, None], t)[:, 0], ref, atol=1e-10)


def test_log_density_matches_oracle(sched50):
    from oracles import mixture_logpdf_1d

    m = two_component()
    xs = np.linspace(-3, 3, 13)
    ab = sched50.abar(20)
    ref = mixture_logpdf_1d(xs, ab, m.weights_for("c1"), m.means, m.variances)
    np.testing.assert_allclose(log_density(m, sched50, xs[:, None], 20, "c1"), ref, rtol=1e-12)


def test_far_tail_stays_finite(sched50):
    e = eps_array(two_component(), sched50, np.array([[1e3], [-1e3]]), 1)
    assert np.all(np.isfinite(e))


def test_forward_noise_seeded():
    s = NoiseSchedule.from_alpha_bar([0.9, 0.675])  # alpha_2 = 0.75
    out = forward_noise(s, Latent(np.zeros(3), 1), np.random.default_rng(7))
    z = np.random.default_rng(7).standard_normal(3)
    np.testing.assert_allclose(out.x, 0.5 * z, rtol=1e-15)
    assert out.t == 2


def test_forward_noise_variance():
    s = NoiseSchedule.from_alpha_bar([0.9, 0.675])
    n = 100_000
    out = forward_noise(s, Latent(np.full((n, 1), 0.3), 1), np.random.default_rng(3))
    v = out.x.var(ddof=1)
    se = 0.25 * np.sqrt(2.0 / (n - 1))
    assert abs(v - 0.25) < 3 * se


def test_forward_noise_past_T_rejected(sched50):
    with pytest.raises(ModelError):
        forward_noise(sched50, Latent(np.zeros(1), 50), np.random.default_rng(0))


def test_sample_x0_single_component_seeded():
    m = ConditionalGMM([1.0], [[0.0, 0.0]], [4.0])
    draw = sample_x0(m, None, np.random.default_rng(11))
    z = np.random.default_rng(11).standard_normal((1, 2))[0]
    np.testing.assert_allclose(draw.x, 2.0 * z, rtol=1e-15)
    assert draw.t == 0


def test_sample_x0_respects_condition(rng):
    draws = sample_x0(two_component(), "c1", rng, 1000)
    assert np.mean(draws.x > 0) > 0.99


def test_sample_xT_mean():
    n = 100_000
    x = sample_xT(3, 50, np.random.default_rng(5), n)
    assert x.t == 50
    assert np.all(np.abs(x.x.mean(axis=0)) < 3.0 / np.sqrt(n))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(weights=[1.0], means=[[0.0]], variances=[0.0]),
        dict(weights=[0.6, 0.6], means=[[0.0], [1.0]], variances=[1.0, 1.0]),
        dict(weights=[1.0], means=[[0.0]], variances=[1.0], conditions={"c": [0.5]}),
        dict(weights=[0.5, 0.5], means=[[0.0]], variances=[1.0, 1.0]),
        dict(weights=[1.5, -0.5], means=[[0.0], [1.0]], variances=[1.0, 1.0]),
    ],
)
def test_invalid_models_rejected(kwargs):
    with pytest.raises(ModelError):
        ConditionalGMM(**kwargs)


def test_nfe_counting(mix_pred):
    x = np.zeros((5, 1))
    mix_pred.eps_pair(x, 10, "c0")
    assert mix_pred.nfe == 1
    mix_pred.eps(x, 10)
    assert mix_pred.nfe == 2
    mix_pred.gap(x, 10, "c0")
    assert mix_pred.nfe == 2


def test_predictor_is_deterministic(mix_pred, rng):
    x = rng.standard_normal((10, 1))
    np.testing.assert_array_equal(mix_pred.eps(x, 7, "c0"), mix_pred.eps(x, 7, "c0"))


@settings(max_examples=60, deadline=None)
@given(
    x=st.floats(-6.0, 6.0),
    t=st.integers(1, 60),
    mean=st.floats(-3.0, 3.0),
    var=st.floats(0.05, 3.0),
)
def test_posterior_mean_identity_property(x, t, mean, var):
    s = scaled_linear_schedule(60)
    m = ConditionalGMM([0.3, 0.7], [[mean], [0.0]], [var, 1.0], {"c": [1.0, 0.0]})
    for c in (None, "c"):
        ref = posterior_mean_1d(np.array([x]), s.abar(t), m.weights_for(c), m.means, m.variances)
        got = posterior_mean(m, s, np.array([[x]]), t, c)[0]
        np.testing.assert_allclose(got, ref, atol=1e-10, rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(w0=st.floats(0.0, 1.0), t=st.integers(1, 50))
def test_condition_collapse_property(w0, t):
    s = scaled_linear_schedule(50)
    m = ConditionalGMM([w0, 1.0 - w0], [[-1.0], [2.0]], [0.3, 0.8], {"u": [w0, 1.0 - w0]})
    p = GMMPredictor(m, s)
    x = np.linspace(-4, 4, 9)[:, None]
    np.testing.assert_array_equal(p.eps(x, t, "u"), p.eps(x, t))


def test_gaussian_pair_predictions_are_affine(sched50):
    p = GMMPredictor(gaussian_pair(), sched50)
    x = np.linspace(-3, 3, 7)[:, None]
    for c in (None, "c"):
        e = p.eps(x, 25, c)[:, 0]
        np.testing.assert_allclose(np.diff(e, 2), 0.0, atol=1e-12)
