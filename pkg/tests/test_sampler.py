import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gaussian_pair, standard_normal, two_component, zero_predictor
from oracles import cfgpp_step, ddim_cfg_step
from fpguide.model import GMMPredictor, Latent
from fpguide.sampler import (
    GuidedNoiseSpec,
    IntervalSolverConfig,
    SamplerError,
    cfgpp_denoise_step,
    ddim_invert_step,
    ddim_step,
    ddpm_step,
    guided_eps,
    interval_grid,
    sampler_update,
    solve_interval,
    unconditional_update,
)
from fpguide.schedule import NoiseSchedule, build_linear_beta_schedule, scaled_linear_schedule, xi, xi_tilde

# abar_1 = 0.64, abar_2 = 0.25
S_TWO = NoiseSchedule.from_alpha_bar([0.64, 0.25])


def test_ddim_step_zero_noise_stub():
    p = zero_predictor(S_TWO)
    out = ddim_step(p, GuidedNoiseSpec.uncond(), Latent([1.0], 2), 1)
    np.testing.assert_allclose(out.x, [1.6], rtol=1e-15)
    assert out.t == 1


def test_ddim_step_standard_normal_hand_value():
    p = GMMPredictor(standard_normal(), S_TWO)
    out = ddim_step(p, GuidedNoiseSpec.uncond(), Latent([1.0], 2), 1)
    # phi = (1 - 0.75) / 0.5 = 0.5; x' = 0.8 * 0.5 + 0.6 * sqrt(0.75)
    np.testing.assert_allclose(out.x, [0.4 + 0.6 * np.sqrt(0.75)], rtol=1e-14)
    np.testing.assert_allclose(out.x, [0.919615242270663], rtol=1e-14)


def test_ddim_step_direction_checked():
    p = zero_predictor(S_TWO)
    with pytest.raises(SamplerError):
        ddim_step(p, GuidedNoiseSpec.uncond(), Latent([1.0], 1), 1)
    with pytest.raises(SamplerError):
        ddim_invert_step(p, GuidedNoiseSpec.uncond(), Latent([1.0], 1), 1)


def test_one_evaluation_per_step(mix_pred):
    x = Latent(np.zeros((4, 1)), 30)
    ddim_step(mix_pred, GuidedNoiseSpec.cfg("c0", 3.0), x, 29)
    assert mix_pred.nfe == 1
    ddim_invert_step(mix_pred, GuidedNoiseSpec.uncond(), x, 31)
    assert mix_pred.nfe == 2


def test_inversion_with_zero_noise_rescales():
    p = zero_predictor(S_TWO)
    out = ddim_invert_step(p, GuidedNoiseSpec.uncond(), Latent([2.0], 1), 2)
    np.testing.assert_allclose(out.x, [2.0 * np.sqrt(0.25 / 0.64)], rtol=1e-15)


def test_inversion_round_trip_adjacent_steps(ddpm1000):
    p = GMMPredictor(standard_normal(), ddpm1000)
    x = np.linspace(-3.0, 3.0, 12)[:, None]
    for t in (1, 10, 100, 500, 999):
        up = ddim_invert_step(p, GuidedNoiseSpec.uncond(), Latent(x, t), t + 1)
        back = ddim_step(p, GuidedNoiseSpec.uncond(), up, t)
        np.testing.assert_allclose(back.x, x, rtol=1e-2)


def test_inversion_from_zero_uses_first_grid_point(mix_pred):
    out = ddim_invert_step(mix_pred, GuidedNoiseSpec.uncond(), Latent([1.0], 0), 1)
    e = mix_pred.eps(np.array([1.0]), 1)
    ab = mix_pred.schedule.abar(1)
    np.testing.assert_allclose(out.x, np.sqrt(ab) * 1.0 + np.sqrt(1 - ab) * e, rtol=1e-15)


@pytest.mark.parametrize("gamma", [0.0, 1.0, 2.5, 7.0])
def test_mix_inversion_ignores_zero_gap(mix_pred, gamma):
    x = Latent(np.linspace(-3, 3, 7)[:, None], 20)
    a = ddim_invert_step(mix_pred, GuidedNoiseSpec.mix("same", gamma), x, 21)
    b = ddim_invert_step(mix_pred, GuidedNoiseSpec.uncond(), x, 21)
    np.testing.assert_array_equal(a.x, b.x)


def test_unit_strengths_reduce_to_conditional(mix_pred, rng):
    x = rng.standard_normal((20, 1))
    e_c = mix_pred.eps(x, 12, "c0")
    np.testing.assert_allclose(guided_eps(mix_pred, GuidedNoiseSpec.cfg("c0", 1.0), x, 12), e_c, rtol=0, atol=1e-15)
    np.testing.assert_allclose(guided_eps(mix_pred, GuidedNoiseSpec.mix("c0", 1.0), x, 12), e_c, rtol=0, atol=1e-15)


@pytest.mark.parametrize(
    "args",
    [("cfg", "c", None), ("cfg", "c", -1.0), ("mix", None, 2.0), ("conditional", None, None), ("bogus", "c", 1.0)],
)
def test_noise_spec_validation(args):
    with pytest.raises(SamplerError):
        GuidedNoiseSpec(*args)


def test_solve_interval_single_step_is_ddim(mix_pred):
    x = Latent(np.array([[0.4], [-1.2]]), 40)
    spec = GuidedNoiseSpec.mix("c0", 2.0)
    np.testing.assert_array_equal(solve_interval(mix_pred, spec, x, 30).x, ddim_step(mix_pred, spec, x, 30).x)
    np.testing.assert_array_equal(
        solve_interval(mix_pred, spec, x, 45).x, ddim_invert_step(mix_pred, spec, x, 45).x
    )


def test_solve_interval_nfe_and_errors(mix_pred):
    x = Latent(np.zeros(1), 40)
    solve_interval(mix_pred, GuidedNoiseSpec.uncond(), x, 33, IntervalSolverConfig(3))
    assert mix_pred.nfe == 3
    with pytest.raises(SamplerError):
        solve_interval(mix_pred, GuidedNoiseSpec.uncond(), x, 40)
    with pytest.raises(SamplerError):
        solve_interval(mix_pred, GuidedNoiseSpec.uncond(), x, 51)
    with pytest.raises(SamplerError):
        IntervalSolverConfig(0)


def test_interval_grid_uneven_split():
    assert interval_grid(10, 3, 2) == [10, 6, 3]
    assert interval_grid(10, 3, 50) == list(range(10, 2, -1))
    g = interval_grid(0, 13, 4)
    assert g[0] == 0 and g[-1] == 13 and max(np.diff(g)) - min(np.diff(g)) <= 1


def test_solve_interval_first_order_convergence(ddpm1000):
    p = GMMPredictor(gaussian_pair(), ddpm1000)
    spec = GuidedNoiseSpec.cond("c")
    x = Latent(np.array([[1.3], [-0.7]]), 800)
    ref = solve_interval(p, spec, x, 600, IntervalSolverConfig(200)).x
    steps = np.array([1, 2, 4, 8, 16])
    errs = [np.abs(solve_interval(p, spec, x, 600, IntervalSolverConfig(int(n))).x - ref).max() for n in steps]
    assert np.all(np.diff(errs) < 0)
    order = np.polyfit(np.log(200.0 / steps), np.log(errs), 1)[0]
    assert order >= 0.9
    assert errs[2] != errs[0]


def test_ddpm_final_step_is_deterministic(mix_pred):
    x = Latent(np.array([0.3]), 1)
    a = ddpm_step(mix_pred, GuidedNoiseSpec.uncond(), x, np.random.default_rng(0))
    b = ddpm_step(mix_pred, GuidedNoiseSpec.uncond(), x, np.random.default_rng(1))
    np.testing.assert_array_equal(a.x, b.x)
    assert a.t == 0


def test_ddpm_step_zero_stub_seeded():
    s = NoiseSchedule.from_alpha_bar([0.9, 0.45])  # alpha_2 = 0.5
    p = zero_predictor(s)
    out = ddpm_step(p, GuidedNoiseSpec.uncond(), Latent([1.0], 2), np.random.default_rng(4))
    z = np.random.default_rng(4).standard_normal(1)
    var = 0.5 * (1 - 0.9) / (1 - 0.45)
    np.testing.assert_allclose(out.x, 1.0 / np.sqrt(0.5) + np.sqrt(var) * z, rtol=1e-14)
    with pytest.raises(SamplerError):
        ddpm_step(p, GuidedNoiseSpec.uncond(), Latent([1.0], 0), np.random.default_rng(4))
    with pytest.raises(SamplerError):
        sampler_update("ddpm", s, np.ones(1), 2, np.zeros(1))


def test_ddpm_step_preserves_gaussian_marginal(ddpm1000):
    p = GMMPredictor(gaussian_pair(), ddpm1000)
    rng = np.random.default_rng(0)
    n, t = 100_000, 500
    ab, ab_prev = ddpm1000.abar(t), ddpm1000.abar(t - 1)
    x0 = 1.0 + np.sqrt(0.5) * rng.standard_normal(n)
    xt = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * rng.standard_normal(n)
    out = ddpm_step(p, GuidedNoiseSpec.cond("c"), Latent(xt[:, None], t), rng).x[:, 0]
    var = ab_prev * 0.5 + 1 - ab_prev
    assert abs(out.mean() - np.sqrt(ab_prev)) < 3 * np.sqrt(var / n)
    assert abs(out.var(ddof=1) - var) < 3 * var * np.sqrt(2.0 / (n - 1))


def test_cfgpp_limits(mix_pred, rng):
    x = Latent(rng.standard_normal((10, 1)), 25)
    unc = ddim_step(mix_pred, GuidedNoiseSpec.uncond(), x, 24).x
    np.testing.assert_allclose(cfgpp_denoise_step(mix_pred, "c0", 0.0, x).x, unc, atol=1e-14)
    np.testing.assert_allclose(cfgpp_denoise_step(mix_pred, "same", 0.8, x).x, unc, atol=1e-14)
    with pytest.raises(SamplerError):
        cfgpp_denoise_step(mix_pred, "c0", 0.5, Latent(np.zeros(1), 0))


def test_cfgpp_step_matches_oracle_and_decomposition(mix_pred, rng):
    s = mix_pred.schedule
    x = rng.standard_normal((50, 1)) * 2
    t = 31
    e_c, e_u = mix_pred.eps(x, t, "c0"), mix_pred.eps(x, t)
    ref = cfgpp_step(e_c, e_u, 0.6, x, s.abar(t), s.abar(t - 1))
    got = cfgpp_denoise_step(mix_pred, "c0", 0.6, Latent(x, t)).x
    np.testing.assert_allclose(got, ref, atol=1e-12)
    x_hat = x - 0.6 * xi_tilde(s, t) * (e_c - e_u)
    np.testing.assert_allclose(unconditional_update(s, x_hat, t, e_u), ref, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(-8, 8), t=st.integers(1, 100), w=st.floats(0.0, 10.0))
def test_cfg_and_cfgpp_decomposition_identities(x, t, w):
    s = scaled_linear_schedule(100)
    p = GMMPredictor(two_component(), s)
    xv = np.array([x])
    e_c, e_u = p.eps(xv, t, "c0"), p.eps(xv, t)
    ab, ab_prev = s.abar(t), s.abar(t - 1)
    vanilla = ddim_cfg_step(e_c, e_u, w, xv, ab, ab_prev)
    split = unconditional_update(s, xv - w * xi(s, t) * (e_c - e_u), t, e_u)
    np.testing.assert_allclose(split, vanilla, rtol=0, atol=1e-10)
    pp = cfgpp_step(e_c, e_u, w, xv, ab, ab_prev)
    split_pp = unconditional_update(s, xv - w * xi_tilde(s, t) * (e_c - e_u), t, e_u)
    np.testing.assert_allclose(split_pp, pp, rtol=0, atol=1e-10)


def test_ddim_matches_textbook_step(mix_pred, rng):
    s = mix_pred.schedule
    x = rng.standard_normal((30, 1))
    t = 18
    got = ddim_step(mix_pred, GuidedNoiseSpec.cfg("c1", 4.0), Latent(x, t), t - 1).x
    ref = ddim_cfg_step(mix_pred.eps(x, t, "c1"), mix_pred.eps(x, t), 4.0, x, s.abar(t), s.abar(t - 1))
    np.testing.assert_allclose(got, ref, atol=1e-13)


def test_unknown_sampler_rejected(sched50):
    with pytest.raises(SamplerError):
        sampler_update("euler", sched50, np.zeros(1), 3, np.zeros(1))


def test_ddim_short_schedule_is_exact_for_noise_free_data():
    # constant-x0 data: eps is exactly (x - sqrt(abar) x0) / sqrt(1 - abar), so DDIM lands on x0
    s = build_linear_beta_schedule(20, 0.01, 0.3)
    from fpguide.model import ConditionalGMM

    m = ConditionalGMM([1.0], [[1.5]], [1e-12])
    p = GMMPredictor(m, s)
    x = Latent(np.array([[0.3], [-2.0]]), 20)
    out = solve_interval(p, GuidedNoiseSpec.uncond(), x, 0, IntervalSolverConfig(20))
    np.testing.assert_allclose(out.x, 1.5, atol=1e-6)
