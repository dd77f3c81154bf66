"""Closed-form Gaussian and Gaussian-mixture oracles.

An isotropic component ``N(mu, c I)`` noised to level ``a`` becomes
``N(sqrt(a) mu, (a c + 1 - a) I)``, so mixtures stay mixtures with the same
weights and every perturbed quantity has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule, NoisyState

__all__ = [
    "IsotropicGaussian",
    "GaussianMixture",
    "NotPositiveDefiniteError",
    "perturbed_score",
    "perturbed_posterior_mean",
    "gaussian_w2_squared",
    "gaussian_fisher_divergence",
    "log_concavity_constant",
    "TOY_ANCHOR",
    "TOY_TARGET",
    "toy_mixture",
]


class NotPositiveDefiniteError(ValueError):
    pass


@dataclass(frozen=True)
class IsotropicGaussian:
    mean: tuple
    scale: float = 1.0

    def __post_init__(self):
        mean = tuple(float(m) for m in np.asarray(self.mean, dtype=np.float64).reshape(-1))
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        if not self.scale > 0:
            raise ValueError(f"variance multiplier must be positive, got {self.scale}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dim(self) -> int:
        return len(self.mean)

    @property
    def mu(self) -> np.ndarray:
        return np.array(self.mean)

    @property
    def cov(self) -> np.ndarray:
        return self.scale * np.eye(self.dim)

    def perturbed(self, alpha_bar: float) -> "IsotropicGaussian":
        return IsotropicGaussian(np.sqrt(alpha_bar) * self.mu, alpha_bar * self.scale + 1.0 - alpha_bar)

    def log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        sq = np.sum((x - self.mu) ** 2, axis=-1)
        return -0.5 * sq / self.scale - 0.5 * self.dim * np.log(2 * np.pi * self.scale)

    def score(self, x) -> np.ndarray:
        return -(np.asarray(x, dtype=np.float64) - self.mu) / self.scale

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu + np.sqrt(self.scale) * rng.standard_normal((n, self.dim))

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "scale": self.scale}


@dataclass(frozen=True)
class GaussianMixture:
    """Weighted isotropic components; ``components`` holds ``(weight, gaussian)`` pairs."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), g) for w, g in self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        weights = np.array([w for w, _ in comps])
        if np.any(weights <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {weights.sum()!r}, not 1")
        if len({g.dim for _, g in comps}) != 1:
            raise ValueError("components have different dimensions")
        object.__setattr__(self, "components", comps)

    @classmethod
    def single(cls, gaussian: IsotropicGaussian) -> "GaussianMixture":
        return cls(((1.0, gaussian),))

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    @property
    def gaussians(self) -> list:
        return [g for _, g in self.components]

    @property
    def dim(self) -> int:
        return self.components[0][1].dim

    def perturbed(self, alpha_bar: float) -> "GaussianMixture":
        return GaussianMixture(tuple((w, g.perturbed(alpha_bar)) for w, g in self.components))

    def _component_log_terms(self, x) -> np.ndarray:
        return np.stack(
            [np.log(w) + g.log_density(x) for w, g in self.components], axis=-1
        )

    def log_density(self, x) -> np.ndarray:
        return logsumexp(self._component_log_terms(x), axis=-1)

    def responsibilities(self, x) -> np.ndarray:
        """Posterior component probabilities, shape ``x.shape[:-1] + (K,)``."""
        logs = self._component_log_terms(x)
        return np.exp(logs - logsumexp(logs, axis=-1, keepdims=True))

    def score(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        resp = self.responsibilities(x)
        scores = np.stack([g.score(x) for g in self.gaussians], axis=-2)
        return np.einsum("...k,...kd->...d", resp, scores)

    def sample(self, n: int, rng: np.random.Generator, return_labels: bool = False):
        labels = rng.choice(len(self.components), size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        mus = np.array([g.mu for g in self.gaussians])
        sd = np.sqrt([g.scale for g in self.gaussians])
        x = mus[labels] + sd[labels, None] * noise
        return (x, labels) if return_labels else x

    def to_dict(self) -> dict:
        return {"components": [{"weight": w, **g.to_dict()} for w, g in self.components]}

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianMixture":
        return cls(
            tuple(
                (c["weight"], IsotropicGaussian(c["mean"], c.get("scale", 1.0)))
                for c in data["components"]
            )
        )


def _as_mixture(dist) -> GaussianMixture:
    if isinstance(dist, IsotropicGaussian):
        return GaussianMixture.single(dist)
    return dist


def perturbed_score(dist, state: NoisyState, schedule: NoiseSchedule) -> np.ndarray:
    """Exact ``grad log q_t(x_t)`` for a (mixture of) isotropic Gaussian data distribution."""
    a = schedule.alpha_bar(schedule.check_t(state.t))
    return _as_mixture(dist).perturbed(a).score(state.x)


def perturbed_posterior_mean(dist, state: NoisyState, schedule: NoiseSchedule) -> np.ndarray:
    """Exact ``E[x0 | x_t]`` as a responsibility-weighted sum of per-component posteriors."""
    mix = _as_mixture(dist)
    a = schedule.alpha_bar(schedule.check_t(state.t))
    x = state.x
    resp = mix.perturbed(a).responsibilities(x)
    means = []
    for g in mix.gaussians:
        # x0 | x_t for a Gaussian prior N(mu, cI) and likelihood N(sqrt(a) x0, (1-a) I)
        v = a * g.scale + 1.0 - a
        means.append(g.mu + (np.sqrt(a) * g.scale / v) * (x - np.sqrt(a) * g.mu))
    return np.einsum("...k,...kd->...d", resp, np.stack(means, axis=-2))


def _gaussian_params(g):
    if isinstance(g, IsotropicGaussian):
        return g.mu, g.cov
    mean, cov = g
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(mean.size)
    return mean, cov


def _spd_sqrt(cov: np.ndarray) -> np.ndarray:
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise NotPositiveDefiniteError("covariance is not symmetric")
    vals, vecs = np.linalg.eigh(cov)
    if np.any(vals <= 0):
        raise NotPositiveDefiniteError(f"covariance eigenvalues {vals} not all positive")
    return (vecs * np.sqrt(vals)) @ vecs.T


def gaussian_w2_squared(a, b) -> float:
    """Squared Bures-Wasserstein distance between two Gaussians.

    ``a`` and ``b`` are :class:`IsotropicGaussian` instances or ``(mean, cov)``
    pairs with a full SPD covariance (a scalar ``cov`` means ``cov * I``).
    """
    ma, ca = _gaussian_params(a)
    mb, cb = _gaussian_params(b)
    _spd_sqrt(ca)
    rb = _spd_sqrt(cb)
    cross = _spd_sqrt(0.5 * ((rb @ ca @ rb) + (rb @ ca @ rb).T))
    return float(np.sum((ma - mb) ** 2) + np.trace(ca + cb - 2.0 * cross))


def gaussian_fisher_divergence(q, p) -> float:
    """``E_q ||grad log q - grad log p||^2`` for Gaussian ``q`` and ``p``.

    With ``x = m_q + e``, the score gap is ``(P_p - P_q) e + P_p (m_q - m_p)``
    where ``P`` are precisions, giving a trace term plus a mean term.
    """
    mq, cq = _gaussian_params(q)
    mp, cp = _gaussian_params(p)
    _spd_sqrt(cq)
    _spd_sqrt(cp)
    pq = np.linalg.inv(cq)
    pp = np.linalg.inv(cp)
    a = pp - pq
    shift = pp @ (mq - mp)
    return float(np.trace(a @ cq @ a.T) + shift @ shift)


def log_concavity_constant(dist: IsotropicGaussian) -> float:
    """Strong log-concavity constant ``1 / c`` of ``N(mu, c I)``."""
    return 1.0 / dist.scale


TOY_ANCHOR = IsotropicGaussian((0.0, -6.0), 1.0)
TOY_TARGET = IsotropicGaussian((0.0, 3.0), 1.5)


def toy_mixture(anchor_weight: float = 0.8) -> GaussianMixture:
    """Training data of the 2D toy: anchor ``N((0,-6), I)`` and target prior ``N((0,3), 1.5 I)``."""
    # round so the default matches a config that spells out 0.8 / 0.2
    return GaussianMixture(
        ((anchor_weight, TOY_ANCHOR), (round(1.0 - anchor_weight, 12), TOY_TARGET))
    )
