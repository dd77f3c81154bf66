"""Discrete noise schedules, the forward noising process and Tweedie conversions.

Timesteps are 1-based: ``t = 1`` is the least noisy level and ``t = T`` the
most noisy one. ``alpha_bar(0)`` is defined as 1 (clean data) so that
samplers can step down to ``t = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "NoisyState",
    "ScheduleRangeError",
    "DegenerateScheduleError",
    "forward_sample",
    "noisy_from_eps",
    "score_from_eps",
    "eps_from_score",
    "tweedie_posterior_mean",
    "tweedie_posterior_mean_from_eps",
    "denoiser_score_gap_factor",
]


class ScheduleRangeError(IndexError, ValueError):
    """Timestep outside ``[1, T]``."""


class DegenerateScheduleError(ZeroDivisionError, ValueError):
    """A conversion hit a zero-noise or zero-signal level."""


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Variance schedule ``betas`` and its cumulative products.

    ``betas[t - 1]`` is the variance added at step ``t``; ``alpha_bars[t - 1]``
    is the running product of ``1 - beta_s`` for ``s <= t``.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False)
    kind: str = "custom"

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64).reshape(-1)
        if betas.size == 0:
            raise ValueError("schedule needs at least one step")
        if not np.all((betas > 0) & (betas < 1)):
            raise ValueError("every beta must lie in (0, 1)")
        betas.setflags(write=False)
        alpha_bars = np.cumprod(1.0 - betas)
        alpha_bars.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @classmethod
    def linear(cls, num_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2):
        return cls(np.linspace(beta_start, beta_end, num_steps), kind="linear")

    @classmethod
    def cosine(cls, num_steps: int = 1000, offset: float = 8e-3, max_beta: float = 0.999):
        # Nichol & Dhariwal style; betas clipped so they stay inside (0, 1).
        s = np.arange(num_steps + 1, dtype=np.float64) / num_steps
        f = np.cos((s + offset) / (1 + offset) * np.pi / 2) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, max_beta)
        return cls(betas, kind="cosine")

    @classmethod
    def from_config(cls, kind: str = "linear", num_steps: int = 1000, **kwargs):
        if kind == "linear":
            return cls.linear(num_steps, **kwargs)
        if kind == "cosine":
            return cls.cosine(num_steps, **kwargs)
        raise ValueError(f"unknown schedule kind {kind!r}")

    @property
    def num_steps(self) -> int:
        return int(self.betas.size)

    def check_t(self, t) -> int:
        if isinstance(t, (bool, np.bool_)) or int(t) != t:
            raise ScheduleRangeError(f"timestep must be an integer, got {t!r}")
        t = int(t)
        if not 1 <= t <= self.num_steps:
            raise ScheduleRangeError(f"timestep {t} outside [1, {self.num_steps}]")
        return t

    def alpha_bar(self, t) -> float:
        """Cumulative signal level at ``t``; ``alpha_bar(0) == 1``."""
        if int(t) == 0:
            return 1.0
        return float(self.alpha_bars[self.check_t(t) - 1])

    def beta(self, t) -> float:
        return float(self.betas[self.check_t(t) - 1])

    def sampling_timesteps(self, num_sample_steps: int) -> np.ndarray:
        """Increasing subset of ``[1, T]`` with uniform stride, always ending at ``T``."""
        if not 1 <= num_sample_steps <= self.num_steps:
            raise ValueError(f"need 1 <= num_sample_steps <= {self.num_steps}")
        ts = np.linspace(1, self.num_steps, num_sample_steps).round().astype(np.int64)
        return np.unique(ts)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "betas": self.betas.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSchedule":
        return cls(np.asarray(data["betas"], dtype=np.float64), kind=data.get("kind", "custom"))

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return self.betas.shape == other.betas.shape and bool(np.all(self.betas == other.betas))

    def __hash__(self):
        return hash(self.betas.tobytes())


@dataclass(frozen=True)
class NoisyState:
    """A point (or a batch of points along the last axis) at timestep ``t``."""

    x: np.ndarray
    t: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("state contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", int(self.t))


def _interior_alpha_bar(t, schedule: NoiseSchedule) -> float:
    a = schedule.alpha_bar(schedule.check_t(t))
    if not 0.0 < a < 1.0:
        raise DegenerateScheduleError(f"alpha_bar_{t} = {a} is not inside (0, 1)")
    return a


def noisy_from_eps(x0, t, schedule: NoiseSchedule, eps) -> NoisyState:
    """``x_t = sqrt(a) x0 + sqrt(1 - a) eps`` for a given noise draw."""
    a = schedule.alpha_bar(schedule.check_t(t))
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 contains non-finite values")
    x = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * np.asarray(eps, dtype=np.float64)
    return NoisyState(x, t)


def forward_sample(x0, t, schedule: NoiseSchedule, rng: np.random.Generator) -> NoisyState:
    """Draw ``x_t ~ q(x_t | x0)``."""
    schedule.check_t(t)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    return noisy_from_eps(x0, t, schedule, eps)


def score_from_eps(eps, t, schedule: NoiseSchedule) -> np.ndarray:
    a = schedule.alpha_bar(t)
    if a >= 1.0:
        raise DegenerateScheduleError("score undefined at zero noise")
    return -np.asarray(eps, dtype=np.float64) / np.sqrt(1.0 - a)


def eps_from_score(score, t, schedule: NoiseSchedule) -> np.ndarray:
    a = schedule.alpha_bar(t)
    if a >= 1.0:
        raise DegenerateScheduleError("score undefined at zero noise")
    return -np.asarray(score, dtype=np.float64) * np.sqrt(1.0 - a)


def tweedie_posterior_mean(state: NoisyState, score, schedule: NoiseSchedule) -> np.ndarray:
    """Posterior mean ``E[x0 | x_t] = (x_t + (1 - a) score) / sqrt(a)``."""
    a = schedule.alpha_bar(schedule.check_t(state.t))
    if a <= 0.0:
        raise DegenerateScheduleError("posterior mean undefined at zero signal")
    return (state.x + (1.0 - a) * np.asarray(score, dtype=np.float64)) / np.sqrt(a)


def tweedie_posterior_mean_from_eps(state: NoisyState, eps, schedule: NoiseSchedule) -> np.ndarray:
    """Same posterior mean written with predicted noise: ``(x_t - sqrt(1 - a) eps) / sqrt(a)``."""
    a = schedule.alpha_bar(schedule.check_t(state.t))
    if a <= 0.0:
        raise DegenerateScheduleError("posterior mean undefined at zero signal")
    return (state.x - np.sqrt(1.0 - a) * np.asarray(eps, dtype=np.float64)) / np.sqrt(a)


def denoiser_score_gap_factor(t, schedule: NoiseSchedule) -> float:
    """``(1 - a)^2 / a``: squared denoiser gap per unit squared score gap."""
    a = _interior_alpha_bar(t, schedule)
    return (1.0 - a) ** 2 / a
