import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aapb.analytic import (
    TOY_ANCHOR,
    TOY_TARGET,
    GaussianMixture,
    IsotropicGaussian,
    NotPositiveDefiniteError,
    gaussian_fisher_divergence,
    gaussian_w2_squared,
    log_concavity_constant,
    perturbed_posterior_mean,
    perturbed_score,
    toy_mixture,
)
from aapb.schedule import NoiseSchedule, NoisyState, tweedie_posterior_mean

SCHED = NoiseSchedule.linear()
# 81 + 5 - 4 * sqrt(1.5), evaluated by hand
TOY_W2_SQUARED = 81.10102051443364


def fd_gradient(f, x, h=1e-4):
    grad = np.zeros_like(x)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = h
        grad[..., i] = (f(x + e) - f(x - e)) / (2 * h)
    return grad


def test_mixture_validation():
    g = IsotropicGaussian((0.0, 0.0))
    with pytest.raises(ValueError):
        GaussianMixture(((0.5, g), (0.4, g)))
    with pytest.raises(ValueError):
        GaussianMixture(((1.2, g), (-0.2, g)))
    with pytest.raises(ValueError):
        IsotropicGaussian((0.0, 0.0), 0.0)
    with pytest.raises(ValueError):
        IsotropicGaussian((np.inf, 0.0))


def test_mixture_round_trip():
    mix = toy_mixture()
    assert GaussianMixture.from_dict(mix.to_dict()) == mix
    np.testing.assert_allclose(mix.weights, [0.8, 0.2])


@pytest.mark.parametrize("t", [1, 10, 250, 700, 1000])
def test_unit_gaussian_score_is_minus_x(t):
    x = np.random.default_rng(t).standard_normal((5, 2))
    got = perturbed_score(IsotropicGaussian((0.0, 0.0)), NoisyState(x, t), SCHED)
    np.testing.assert_allclose(got, -x, atol=1e-12)


@pytest.mark.parametrize("t", [1, 100, 600, 1000])
def test_single_gaussian_score_closed_form(t):
    g = IsotropicGaussian((1.5, -2.0), 0.7)
    a = SCHED.alpha_bar(t)
    x = np.random.default_rng(0).standard_normal((20, 2)) * 3
    want = -(x - math.sqrt(a) * g.mu) / (a * g.scale + 1 - a)
    np.testing.assert_allclose(perturbed_score(g, NoisyState(x, t), SCHED), want, atol=1e-12)


@pytest.mark.parametrize("t", [1, 50, 300, 1000])
def test_mixture_score_matches_finite_differences(t):
    mix = toy_mixture()
    a = SCHED.alpha_bar(t)
    x = np.random.default_rng(t).uniform(-10, 8, (100, 2))
    fd = fd_gradient(mix.perturbed(a).log_density, x, h=1e-4)
    np.testing.assert_allclose(perturbed_score(mix, NoisyState(x, t), SCHED), fd, atol=1e-6)


def test_far_field_responsibility():
    mix = toy_mixture()
    r = mix.responsibilities(np.array([[0.0, -40.0], [0.0, 40.0]]))
    assert r[0, 0] > 1 - 1e-6 and r[1, 1] > 1 - 1e-6
    assert np.all(np.isfinite(mix.score(np.array([[0.0, 1e4]]))))


def test_posterior_mean_at_perturbed_mean_is_data_mean():
    g = IsotropicGaussian((2.0, -1.0), 1.7)
    for t in (5, 400, 999):
        a = SCHED.alpha_bar(t)
        got = perturbed_posterior_mean(g, NoisyState(math.sqrt(a) * g.mu, t), SCHED)
        np.testing.assert_allclose(got, g.mu, atol=1e-12)


def test_posterior_mean_agrees_with_tweedie():
    mix = toy_mixture()
    rng = np.random.default_rng(3)
    for _ in range(1000):
        t = int(rng.integers(1, 1001))
        state = NoisyState(rng.uniform(-9, 6, 2), t)
        direct = perturbed_posterior_mean(mix, state, SCHED)
        via_score = tweedie_posterior_mean(state, perturbed_score(mix, state, SCHED), SCHED)
        np.testing.assert_allclose(direct, via_score, rtol=0, atol=1e-10 * max(1, abs(direct).max()))


def test_small_noise_limit_recovers_data_score():
    mix = toy_mixture()
    grid = np.stack(np.meshgrid(np.linspace(-9, 6, 16), np.linspace(-3, 3, 7)), -1).reshape(-1, 2)
    gaps = []
    for beta in (1e-2, 1e-4, 1e-6):
        s = NoiseSchedule(np.array([beta]))
        gaps.append(np.abs(perturbed_score(mix, NoisyState(grid, 1), s) - mix.score(grid)).max())
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-4


def test_w2_frozen_toy_value():
    assert gaussian_w2_squared(TOY_ANCHOR, TOY_TARGET) == pytest.approx(TOY_W2_SQUARED, abs=1e-12)


def test_w2_identity_and_symmetry():
    assert gaussian_w2_squared(TOY_TARGET, TOY_TARGET) == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = rng.standard_normal((2, 2))
        a = (rng.standard_normal(2), m @ m.T + 0.1 * np.eye(2))
        m = rng.standard_normal((2, 2))
        b = (rng.standard_normal(2), m @ m.T + 0.1 * np.eye(2))
        assert abs(gaussian_w2_squared(a, b) - gaussian_w2_squared(b, a)) < 1e-12 * max(
            1, gaussian_w2_squared(a, b)
        )


def test_w2_commuting_covariances():
    a = ([1.0, 2.0], np.diag([4.0, 0.25]))
    b = ([0.0, 0.0], np.diag([1.0, 9.0]))
    # (2-1)^2 + (0.5-3)^2 for the covariance part
    assert gaussian_w2_squared(a, b) == pytest.approx(5.0 + 1.0 + 6.25, abs=1e-12)


def test_w2_rejects_non_pd():
    with pytest.raises(NotPositiveDefiniteError):
        gaussian_w2_squared(([0, 0], np.diag([1.0, -1.0])), TOY_TARGET)
    with pytest.raises(NotPositiveDefiniteError):
        gaussian_w2_squared(([0, 0], np.array([[1.0, 0.5], [0.0, 1.0]])), TOY_TARGET)


def test_log_concavity_constant():
    assert log_concavity_constant(IsotropicGaussian((0, 0), 1.0)) == 1.0
    assert log_concavity_constant(TOY_TARGET) == pytest.approx(2 / 3, abs=1e-15)


def test_negative_log_density_hessian_is_k_identity():
    g = TOY_TARGET
    k = log_concavity_constant(g)
    h = 1e-3
    x = np.array([0.4, 1.1])
    hess = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h
            f = lambda y: -g.log_density(y)  # noqa: E731
            hess[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    np.testing.assert_allclose(hess, k * np.eye(2), atol=1e-6)


def test_fisher_divergence_shifted_unit_gaussians():
    mu = np.array([1.5, -0.5])
    assert gaussian_fisher_divergence((mu, np.eye(2)), ((0, 0), np.eye(2))) == pytest.approx(mu @ mu)


def test_fisher_divergence_scaled_gaussians():
    # q = N(0, I), p = N(0, 2I): gap = -x/2, E||x/2||^2 = 2 * 1/4
    assert gaussian_fisher_divergence(((0, 0), np.eye(2)), ((0, 0), 2 * np.eye(2))) == pytest.approx(0.5)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(0.05, 20), st.floats(0.05, 20), st.floats(-0.9, 0.9)
)
def test_transport_information_bound_for_toy_target(m0, m1, v0, v1, rho):
    cov = np.array([[v0, rho * math.sqrt(v0 * v1)], [rho * math.sqrt(v0 * v1), v1]])
    q = (np.array([m0, m1]), cov)
    k = log_concavity_constant(TOY_TARGET)
    assert gaussian_w2_squared(q, TOY_TARGET) <= gaussian_fisher_divergence(q, TOY_TARGET) / k**2 + 1e-10
