import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowpalm.diffusion import (
    DenoiserError,
    GaussianDenoiser,
    NoiseSchedule,
    SamplerConfig,
    clean_denoise,
    ddim_step,
    ddim_update,
    gaussian_denoiser,
    make_linear_schedule,
    renoise,
    sample_three_stage,
    sigma,
    smoothed,
)
from flowpalm.prior import DeformationRecord

# independent evaluations of the scalar examples
DDIM_SCALAR = (1.0 - 0.01 / math.sqrt(0.2) * 0.5) / math.sqrt(0.99)  # 0.99380115...
CLEAN_SCALAR = (0.7 - math.sqrt(0.51) * 0.2) / 0.7  # 0.79595918...
POSTERIOR_SCALAR = math.sqrt(0.5)  # 0.70710678...


def test_hand_cumulative_product():
    s = NoiseSchedule.from_betas([0.1, 0.2])
    np.testing.assert_allclose(s.alpha_bar, [1.0, 0.9, 0.72])
    assert make_linear_schedule(3, 0.5, 0.5).alpha_bar[3] == pytest.approx(0.125)


@given(st.integers(2, 500), st.floats(1e-5, 0.01), st.floats(0.01, 0.5))
def test_alpha_bar_strictly_decreasing(T, lo, hi):
    ab = make_linear_schedule(T, lo, hi).alpha_bar
    assert ab[0] == 1.0 and np.all(np.diff(ab) < 0)


def test_invalid_schedules():
    with pytest.raises(ValueError):
        NoiseSchedule.from_betas([0.1, 1.0])
    with pytest.raises(ValueError):
        make_linear_schedule(1)


def test_scalar_update():
    assert ddim_update(1.0, 0.5, 0.99, 0.8) == pytest.approx(DDIM_SCALAR, abs=1e-12)
    assert DDIM_SCALAR == pytest.approx(0.99380, abs=1e-5)


def test_zero_eps_divides_by_sqrt_alpha():
    s = make_linear_schedule(50)
    x = np.random.default_rng(0).normal(size=(4, 4))
    np.testing.assert_allclose(ddim_step(x, np.zeros_like(x), 10, 9, s), x / math.sqrt(s.alpha[10]))


def test_eta_zero_means_no_step_noise():
    s = make_linear_schedule(250)
    assert all(sigma(s, t, t - 1, 0.0) == 0.0 for t in range(1, 251))
    x = np.ones((3, 3))
    assert np.array_equal(ddim_step(x, x, 5, 4, s), ddim_step(x, x, 5, 4, s))


def test_clean_denoise_scalar_and_edge():
    s = NoiseSchedule.from_betas([0.51])  # alpha_bar[1] = 0.49
    assert clean_denoise(0.7, 0.2, 1, s) == pytest.approx(CLEAN_SCALAR, abs=1e-12)
    assert clean_denoise(0.3, 5.0, 0, s) == 0.3
    assert renoise(np.array([0.3]), np.array([5.0]), 0, s)[0] == 0.3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 250), st.integers(0, 2**32 - 1))
def test_renoise_clean_denoise_inverse(t, seed):
    s = make_linear_schedule(250)
    g = np.random.default_rng(seed)
    x0, n = g.normal(size=(5,)), g.normal(size=(5,))
    np.testing.assert_allclose(clean_denoise(renoise(x0, n, t, s), n, t, s), x0, atol=1e-6)


def test_renoise_variance_monte_carlo():
    s = make_linear_schedule(250)
    g = np.random.default_rng(4)
    t, sd = 100, 0.3
    out = renoise(g.normal(0, sd, 10_000), g.normal(size=10_000), t, s)
    ab = s.alpha_bar[t]
    assert out.var() == pytest.approx(ab * sd**2 + 1 - ab, rel=0.03)


def test_gaussian_posterior_scalar():
    s = NoiseSchedule.from_betas([0.5])  # alpha_bar[1] = 0.5
    d = GaussianDenoiser(s, 1.0, lambda c: 0.0)
    x = np.array([1.0])
    assert d.posterior_mean(x, 0.0, 1)[0] == pytest.approx(POSTERIOR_SCALAR)
    assert d(x, 0.0, 1)[0] == pytest.approx(POSTERIOR_SCALAR)


def test_gaussian_denoiser_at_prior_mean_and_small_spread():
    s = make_linear_schedule(100)
    m = np.random.default_rng(1).uniform(-1, 1, (6, 6))
    d = GaussianDenoiser(s, 0.3, lambda c: c)
    x = math.sqrt(s.alpha_bar[40]) * m
    np.testing.assert_allclose(d(x, m, 40), 0.0, atol=1e-12)
    tight = GaussianDenoiser(s, 1e-9, lambda c: c)
    x = np.random.default_rng(2).normal(size=(6, 6))
    np.testing.assert_allclose(tight.posterior_mean(x, m, 40), m, atol=1e-6)
    assert d(x, None, 40).shape == x.shape  # absent condition accepted


def test_stage_partition_at_defaults():
    cfg = SamplerConfig()
    assert (cfg.t_star, cfg.t_u) == (125, 63)
    stages = [st for st, _, _ in cfg.steps()]
    assert [stages.count(k) for k in (1, 2, 3)] == [125, 62, 63]


def test_stage_partition_strided():
    cfg = SamplerConfig(step_stride=5)
    ts = cfg.timesteps()
    assert ts[0] == 250 and ts[-1] == 0 and 125 in ts and 63 in ts
    stages = [st for st, _, _ in cfg.steps()]
    assert [stages.count(k) for k in (1, 2, 3)] == [25, 13, 13]


@given(st.integers(2, 300), st.floats(0.05, 0.45), st.floats(0.55, 0.95), st.integers(1, 20))
def test_stage_partition_covers_every_step(T, tau_u, frac, stride):
    cfg = SamplerConfig(T, frac, tau_u, step_stride=stride)
    steps = cfg.steps()
    assert steps[0][1] == T and steps[-1][2] == 0
    assert all(t_prev < t for _, t, t_prev in steps)
    assert [st for st, _, _ in steps] == sorted((st for st, _, _ in steps))
    assert 1 <= cfg.t_u <= cfg.t_star < T


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(tau_u=0.6)
    with pytest.raises(ValueError):
        SamplerConfig(eta=2)
    with pytest.raises(ValueError):
        SamplerConfig(rule="euler")


def small_setup(size=24, T=40):
    crease = np.random.default_rng(3).uniform(-1, 1, (size, size))
    record = DeformationRecord(np.zeros((size, size, 2), np.float32), 0.0, 1.0, "p", "id000")
    cfg = SamplerConfig(T=T)
    schedule = make_linear_schedule(T)
    return crease, record, cfg, schedule


def test_sampler_deterministic_and_traced():
    crease, record, cfg, schedule = small_setup()
    den = gaussian_denoiser(schedule, 0.3)
    a = sample_three_stage(den, crease, record, cfg, schedule, master_seed=5, trace=True)
    b = sample_three_stage(den, crease, record, cfg, schedule, master_seed=5)
    assert a.image.tobytes() == b.image.tobytes()
    assert set(a.trace) == {"cond_warped", "stage1_t40", "stage1_t20", "x_clean", "n_warp",
                            "stage2_t20", "stage3_t11", "stage3_t0"}
    assert a.image.min() >= -1 and a.image.max() <= 1


def test_sampler_rejects_broken_denoiser():
    crease, record, cfg, schedule = small_setup()
    with pytest.raises(DenoiserError):
        sample_three_stage(lambda x, c, t: np.full_like(x, np.nan), crease, record, cfg, schedule)
    with pytest.raises(DenoiserError):
        sample_three_stage(lambda x, c, t: np.zeros(3), crease, record, cfg, schedule)


def test_reprojection_rule_converges_to_data_distribution():
    """Single conditioned run, re-projection update: output ~ N(m(C), s^2)."""
    T, size, s = 250, 16, 0.3
    schedule = make_linear_schedule(T)
    m = smoothed(2.0)
    crease = np.random.default_rng(0).uniform(-1, 1, (size, size))
    den = gaussian_denoiser(schedule, s, m)
    g = np.random.default_rng(1)
    outs = []
    for _ in range(400):
        x = g.standard_normal((size, size))
        for t in range(T, 0, -1):
            x = ddim_step(x, den(x, crease, t), t, t - 1, schedule, rule="ddim")
        outs.append(x)
    outs = np.array(outs)
    assert np.abs(outs.mean(0) - m(crease)).max() < 0.1
    assert outs.std(0).mean() == pytest.approx(s, rel=0.05)
