import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aapb.schedule import (
    DegenerateScheduleError,
    NoiseSchedule,
    NoisyState,
    ScheduleRangeError,
    denoiser_score_gap_factor,
    eps_from_score,
    forward_sample,
    noisy_from_eps,
    score_from_eps,
    tweedie_posterior_mean,
    tweedie_posterior_mean_from_eps,
)


def single_step(alpha_bar):
    """One-step schedule whose only level has the requested alpha_bar."""
    return NoiseSchedule(np.array([1.0 - alpha_bar]))


# alpha_bar of the default linear schedule, computed at 30 digits with mpmath
LINEAR_ALPHA_BAR = {
    1: 0.9999,
    2: 0.99978009207207207207,
    10: 0.99810520478583461889,
    100: 0.89701814567496036372,
    500: 0.078587242881778237343,
    1000: 0.000040358297653756833148,
}


@pytest.mark.parametrize("t,expected", sorted(LINEAR_ALPHA_BAR.items()))
def test_linear_alpha_bar_frozen(t, expected):
    assert NoiseSchedule.linear().alpha_bar(t) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("factory", [NoiseSchedule.linear, NoiseSchedule.cosine])
def test_schedule_invariants(factory):
    s = factory()
    assert np.all((s.betas > 0) & (s.betas < 1))
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.alpha_bars > 0) & (s.alpha_bars < 1))
    running = 1.0
    for t in range(1, s.num_steps + 1):
        running *= 1.0 - s.beta(t)
        assert abs(s.alpha_bar(t) - running) < 1e-12


def test_alpha_bar_zero_is_one_and_range_errors():
    s = NoiseSchedule.linear(10)
    assert s.alpha_bar(0) == 1.0
    for bad in (-1, 11, 2.5):
        with pytest.raises(ScheduleRangeError):
            s.alpha_bar(bad)
    with pytest.raises(ValueError):
        NoiseSchedule(np.array([0.1, 1.0]))


def test_arrays_are_read_only():
    s = NoiseSchedule.linear(10)
    with pytest.raises(ValueError):
        s.alpha_bars[0] = 0.5


def test_sampling_timesteps_strided():
    ts = NoiseSchedule.linear().sampling_timesteps(100)
    assert ts[0] == 1 and ts[-1] == 1000 and len(ts) == 100
    assert np.all(np.diff(ts) > 0)


def test_round_trip_dict():
    s = NoiseSchedule.linear(50)
    assert NoiseSchedule.from_dict(s.to_dict()) == s
    assert hash(NoiseSchedule.from_dict(s.to_dict())) == hash(s)


def test_forward_zero_noise_limit():
    state = noisy_from_eps([0.0, 0.0], 1, NoiseSchedule.linear(), np.zeros(2))
    np.testing.assert_array_equal(state.x, [0.0, 0.0])


def test_forward_substitution():
    state = noisy_from_eps([1.0, 2.0], 1, single_step(0.25), [1.0, -1.0])
    np.testing.assert_allclose(state.x, [0.5 + math.sqrt(0.75), 1.0 - math.sqrt(0.75)], atol=1e-15)


def test_forward_moments_within_three_sigma():
    s = NoiseSchedule.linear()
    t, n = 300, 100_000
    x0 = np.array([1.0, -2.0])
    a = s.alpha_bar(t)
    draws = forward_sample(np.broadcast_to(x0, (n, 2)), t, s, np.random.default_rng(0)).x
    var = 1.0 - a
    mean_err = np.abs(draws.mean(0) - math.sqrt(a) * x0)
    assert np.all(mean_err < 3 * math.sqrt(var / n))
    # sample variance of a Gaussian has sd var * sqrt(2 / (n - 1))
    assert np.all(np.abs(draws.var(0, ddof=1) - var) < 3 * var * math.sqrt(2 / (n - 1)))


def test_forward_rejects_bad_timestep():
    with pytest.raises(ScheduleRangeError):
        forward_sample([0.0, 0.0], 0, NoiseSchedule.linear(), np.random.default_rng(0))


def test_score_from_eps_examples():
    s = single_step(0.75)
    np.testing.assert_array_equal(score_from_eps([0.0, 0.0], 1, s), [0.0, 0.0])
    np.testing.assert_allclose(score_from_eps([1.0, 0.0], 1, s), [-2.0, 0.0], atol=1e-15)
    with pytest.raises(DegenerateScheduleError):
        score_from_eps([1.0, 0.0], 0, s)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2),
    st.integers(1, 1000),
)
def test_eps_score_round_trip(eps, t):
    s = NoiseSchedule.linear()
    back = eps_from_score(score_from_eps(eps, t, s), t, s)
    np.testing.assert_allclose(back, eps, rtol=1e-12, atol=1e-12)


def test_tweedie_zero_noise_limit():
    s = NoiseSchedule(np.array([1e-14]))
    x = np.array([0.3, -1.2])
    np.testing.assert_allclose(tweedie_posterior_mean(NoisyState(x, 1), [0.0, 0.0], s), x, atol=1e-12)


def test_tweedie_score_and_eps_forms_agree():
    s = NoiseSchedule.linear()
    rng = np.random.default_rng(1)
    for _ in range(1000):
        t = int(rng.integers(1, 1001))
        x = rng.standard_normal(2) * 5
        eps = rng.standard_normal(2)
        state = NoisyState(x, t)
        a = tweedie_posterior_mean(state, score_from_eps(eps, t, s), s)
        b = tweedie_posterior_mean_from_eps(state, eps, s)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12 * max(1.0, np.abs(b).max()))


def test_gap_factor_examples():
    assert denoiser_score_gap_factor(1, single_step(0.5)) == pytest.approx(0.5, abs=1e-15)
    near_one = [denoiser_score_gap_factor(1, single_step(1 - h)) for h in (1e-2, 1e-4, 1e-6)]
    assert near_one[0] > near_one[1] > near_one[2] and near_one[2] < 1e-11
    with pytest.raises(ScheduleRangeError):
        denoiser_score_gap_factor(0, NoiseSchedule.linear())
    underflow = NoiseSchedule(np.full(200, 0.99))  # alpha_bar_200 rounds to 0.0
    with pytest.raises(DegenerateScheduleError):
        denoiser_score_gap_factor(200, underflow)
    with pytest.raises(DegenerateScheduleError):
        tweedie_posterior_mean(NoisyState([0.0, 0.0], 200), [0.0, 0.0], underflow)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 1000),
    st.lists(st.floats(-50, 50), min_size=6, max_size=6),
)
def test_gap_identity_any_score_pair(t, v):
    s = NoiseSchedule.linear()
    x, s1, s2 = np.array(v[:2]), np.array(v[2:4]), np.array(v[4:])
    state = NoisyState(x, t)
    gap = tweedie_posterior_mean(state, s1, s) - tweedie_posterior_mean(state, s2, s)
    lhs = gap @ gap
    rhs = denoiser_score_gap_factor(t, s) * float((s1 - s2) @ (s1 - s2))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, rhs)
