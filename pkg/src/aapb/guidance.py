"""Classifier-free guidance with an anchor/target blended conditional score.

The guided score is

    s_guided = s_u + w * ((1 - gamma) * s_T + gamma * s_A - s_u)

and the adaptive coefficient is the minimiser of ``||s_guided - s_T||^2`` over
``gamma``, which is available in closed form.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .analytic import GaussianMixture, IsotropicGaussian, TOY_ANCHOR, TOY_TARGET, toy_mixture
from .schedule import NoiseSchedule, score_from_eps
from .scorenet.net import Condition, ScoreNet

__all__ = [
    "ScoreSource",
    "NetScoreSource",
    "AnalyticScoreSource",
    "GuidanceMode",
    "GuidanceSpec",
    "DegenerateAnchor",
    "GammaTerms",
    "StepTrace",
    "SampleResult",
    "blend",
    "guide",
    "blended_conditional_score",
    "guided_score",
    "gamma_terms",
    "adaptive_gamma",
    "alignment_loss",
    "aapb_sample",
    "fisher_pointwise_dominance",
]


class ScoreSource(Protocol):
    def score(self, x: np.ndarray, t: int, cond: Condition) -> np.ndarray: ...


class NetScoreSource:
    """Scores from a trained noise-prediction network."""

    def __init__(self, net: ScoreNet, schedule: NoiseSchedule):
        self.net = net
        self.schedule = schedule

    def score(self, x, t, cond):
        x = np.asarray(x, dtype=np.float64)
        eps = self.net(x, t, int(Condition.parse(cond)))
        return score_from_eps(eps.reshape(x.shape), t, self.schedule)

    def scores(self, x, t):
        """All three branches in one batched forward pass."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        conds = np.repeat(
            [int(Condition.UNCONDITIONAL), int(Condition.TARGET), int(Condition.ANCHOR)], n
        )
        eps = self.net(np.tile(x, (3, 1)), t, conds)
        s = score_from_eps(eps, t, self.schedule)
        return s[:n], s[n : 2 * n], s[2 * n :]


class AnalyticScoreSource:
    """Exact perturbed scores of Gaussian (mixture) conditionals.

    ``target`` and ``anchor`` are the per-condition data distributions; the
    unconditional distribution defaults to their mixture with
    ``anchor_weight`` on the anchor.
    """

    def __init__(
        self,
        schedule: NoiseSchedule,
        target=TOY_TARGET,
        anchor=TOY_ANCHOR,
        unconditional: GaussianMixture | None = None,
        anchor_weight: float = 0.8,
    ):
        def mix(d):
            return GaussianMixture.single(d) if isinstance(d, IsotropicGaussian) else d

        self.schedule = schedule
        self.dists = {
            Condition.TARGET: mix(target),
            Condition.ANCHOR: mix(anchor),
            Condition.UNCONDITIONAL: unconditional
            if unconditional is not None
            else GaussianMixture(
                tuple((anchor_weight * w, g) for w, g in mix(anchor).components)
                + tuple(((1 - anchor_weight) * w, g) for w, g in mix(target).components)
            ),
        }

    @classmethod
    def toy(cls, schedule: NoiseSchedule, anchor_weight: float = 0.8):
        return cls(schedule, unconditional=toy_mixture(anchor_weight))

    def score(self, x, t, cond):
        a = self.schedule.alpha_bar(self.schedule.check_t(t))
        return self.dists[Condition.parse(cond)].perturbed(a).score(x)

    def scores(self, x, t):
        return (
            self.score(x, t, Condition.UNCONDITIONAL),
            self.score(x, t, Condition.TARGET),
            self.score(x, t, Condition.ANCHOR),
        )


def _three_scores(src, x, t):
    if hasattr(src, "scores"):
        return src.scores(x, t)
    return (
        src.score(x, t, Condition.UNCONDITIONAL),
        src.score(x, t, Condition.TARGET),
        src.score(x, t, Condition.ANCHOR),
    )


class GuidanceMode(enum.Enum):
    PLAIN_CFG = "plain_cfg"
    FIXED_GAMMA = "fixed_gamma"
    ADAPTIVE_GAMMA = "adaptive_gamma"


@dataclass(frozen=True)
class GuidanceSpec:
    """Guidance scale plus how the anchor/target blend is chosen.

    ``condition`` is only used by :attr:`GuidanceMode.PLAIN_CFG`. ``clamp``
    (ablation only) clips adaptive gammas into ``[0, 1]``; ``reduce`` picks
    per-sample gammas or their batch mean.
    """

    w: float
    mode: GuidanceMode = GuidanceMode.ADAPTIVE_GAMMA
    gamma: float | None = None
    condition: Condition = Condition.TARGET
    clamp: bool = False
    reduce: str = "per_sample"
    degenerate_tol: float = 1e-12
    sampler: str = "ddpm"

    def __post_init__(self):
        object.__setattr__(self, "mode", GuidanceMode(self.mode))
        object.__setattr__(self, "condition", Condition.parse(self.condition))
        if not (self.w > 0 and math.isfinite(self.w)):
            raise ValueError(f"guidance scale must be positive, got {self.w}")
        if self.mode is GuidanceMode.FIXED_GAMMA:
            if self.gamma is None or not math.isfinite(self.gamma):
                raise ValueError("fixed-gamma guidance needs a finite gamma")
        if self.reduce not in ("per_sample", "batch_mean"):
            raise ValueError(f"unknown reduce mode {self.reduce!r}")
        if self.sampler not in ("ddpm", "ddim"):
            raise ValueError(f"unknown sampler {self.sampler!r}")

    @classmethod
    def plain(cls, w, condition=Condition.TARGET, **kw):
        return cls(w, GuidanceMode.PLAIN_CFG, condition=condition, **kw)

    @classmethod
    def fixed(cls, w, gamma, **kw):
        return cls(w, GuidanceMode.FIXED_GAMMA, gamma=gamma, **kw)

    @classmethod
    def adaptive(cls, w, **kw):
        return cls(w, GuidanceMode.ADAPTIVE_GAMMA, **kw)

    @property
    def label(self) -> str:
        if self.mode is GuidanceMode.FIXED_GAMMA:
            return f"fixed({self.gamma:g})"
        if self.mode is GuidanceMode.PLAIN_CFG:
            return f"cfg({self.condition.name.lower()})"
        return "adaptive"

    def to_dict(self) -> dict:
        return {
            "w": self.w,
            "mode": self.mode.value,
            "gamma": self.gamma,
            "condition": self.condition.name,
            "clamp": self.clamp,
            "reduce": self.reduce,
            "degenerate_tol": self.degenerate_tol,
            "sampler": self.sampler,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GuidanceSpec":
        return cls(**d)


class DegenerateAnchor(ArithmeticError):
    """Anchor and target scores coincide, so the blend direction is undefined."""


def blend(s_T, s_A, gamma):
    s_T, s_A, gamma = np.asarray(s_T), np.asarray(s_A), np.asarray(gamma)
    if gamma.ndim == 1:
        gamma = gamma[:, None]
    return (1.0 - gamma) * s_T + gamma * s_A


def guide(s_u, s_T, s_A, w, gamma):
    s_u = np.asarray(s_u)
    return s_u + w * (blend(s_T, s_A, gamma) - s_u)


def blended_conditional_score(src: ScoreSource, x, t, gamma):
    return blend(src.score(x, t, Condition.TARGET), src.score(x, t, Condition.ANCHOR), gamma)


def guided_score(src: ScoreSource, x, t, spec: GuidanceSpec, gamma=None):
    if spec.mode is GuidanceMode.PLAIN_CFG:
        s_u = src.score(x, t, Condition.UNCONDITIONAL)
        return s_u + spec.w * (src.score(x, t, spec.condition) - s_u)
    s_u, s_T, s_A = _three_scores(src, x, t)
    if gamma is None:
        if spec.mode is GuidanceMode.FIXED_GAMMA:
            gamma = spec.gamma
        else:
            gamma = gamma_terms(s_u, s_T, s_A, spec.w, spec.degenerate_tol).gamma
    return guide(s_u, s_T, s_A, spec.w, gamma)


@dataclass
class GammaTerms:
    """Pieces of the closed-form coefficient; arrays are per sample."""

    gamma: np.ndarray
    dot_rT_d: np.ndarray
    norm_d_sq: np.ndarray
    fallback: np.ndarray
    w: float


def gamma_terms(s_u, s_T, s_A, w, tol: float = 1e-12) -> GammaTerms:
    """Closed-form minimiser of the alignment loss, falling back to 0 where ``||s_A - s_T||^2 <= tol``."""
    if not np.all(np.asarray(w) > 0):
        raise ValueError("guidance scale must be positive")
    s_u, s_T, s_A = (np.asarray(s, dtype=np.float64) for s in (s_u, s_T, s_A))
    d = s_A - s_T
    dot = np.sum((s_T - s_u) * d, axis=-1)
    norm = np.sum(d * d, axis=-1)
    fallback = norm <= tol
    safe = np.where(fallback, 1.0, norm)
    gamma = np.where(fallback, 0.0, (1.0 - w) / w * dot / safe)
    return GammaTerms(gamma, dot, norm, fallback, w if np.ndim(w) else float(w))


def adaptive_gamma(s_u, s_T, s_A, w, tol: float = 1e-12):
    """``((1 - w) / w) <s_T - s_u, s_A - s_T> / ||s_A - s_T||^2``.

    Works row-wise on batches. Raises :class:`DegenerateAnchor` if any row has
    ``||s_A - s_T||^2 <= tol``; use :func:`gamma_terms` for the fallback form.
    """
    terms = gamma_terms(s_u, s_T, s_A, w, tol)
    if np.any(terms.fallback):
        raise DegenerateAnchor(f"||s_A - s_T||^2 <= {tol}")
    return float(terms.gamma) if terms.gamma.ndim == 0 else terms.gamma


def alignment_loss(s_u, s_T, s_A, w, gamma):
    """``||guided(gamma) - s_T||^2``; keeps the input precision (e.g. ``np.longdouble``)."""
    diff = guide(s_u, s_T, s_A, w, gamma) - np.asarray(s_T)
    out = np.sum(diff * diff, axis=-1)
    return out.item() if out.ndim == 0 and out.dtype == np.float64 else out


@dataclass
class StepTrace:
    t: int
    gamma: np.ndarray
    s_u: np.ndarray
    s_T: np.ndarray
    s_A: np.ndarray
    guided: np.ndarray
    dot_rT_d: np.ndarray
    norm_d_sq: np.ndarray
    fallback: np.ndarray
    w: float
    adaptive: bool
    reduce: str = "per_sample"
    clamp: bool = False

    def reconstruct_gamma(self) -> np.ndarray:
        """Recompute gamma from the stored inner-product and norm terms."""
        if not self.adaptive:
            return self.gamma.copy()
        safe = np.where(self.fallback, 1.0, self.norm_d_sq)
        gamma = np.where(self.fallback, 0.0, (1.0 - self.w) / self.w * self.dot_rT_d / safe)
        if self.reduce == "batch_mean":
            ok = ~self.fallback
            gamma = np.full_like(gamma, np.mean(gamma[ok]) if np.any(ok) else 0.0)
        if self.clamp:
            gamma = np.clip(gamma, 0.0, 1.0)
        return gamma


@dataclass
class SampleResult:
    samples: np.ndarray
    traces: list = field(default_factory=list)
    fallback_events: int = 0

    def gamma_matrix(self) -> np.ndarray:
        """``(num_steps, n)`` gammas in sampling order (most noisy first)."""
        return np.stack([tr.gamma for tr in self.traces])


def _step_gamma(spec: GuidanceSpec, s_u, s_T, s_A):
    terms = gamma_terms(s_u, s_T, s_A, spec.w, spec.degenerate_tol)
    n = s_u.shape[0]
    if spec.mode is GuidanceMode.FIXED_GAMMA:
        gamma = np.full(n, float(spec.gamma))
    elif spec.mode is GuidanceMode.PLAIN_CFG:
        gamma = np.full(n, 0.0 if spec.condition is Condition.TARGET else 1.0)
    else:
        gamma = terms.gamma
        if spec.reduce == "batch_mean":
            ok = ~terms.fallback
            gamma = np.full(n, np.mean(gamma[ok]) if np.any(ok) else 0.0)
        if spec.clamp:
            gamma = np.clip(gamma, 0.0, 1.0)
    return gamma, terms


def _run_chunk(src, spec, schedule, timesteps, n, rng, record_trace):
    ts = list(timesteps)
    x = rng.standard_normal((n, 2 if not hasattr(src, "dim") else src.dim))
    traces, fallbacks = [], 0
    for i in range(len(ts) - 1, -1, -1):
        t = int(ts[i])
        a = schedule.alpha_bar(t)
        a_prev = schedule.alpha_bar(ts[i - 1]) if i > 0 else 1.0
        s_u, s_T, s_A = _three_scores(src, x, t)
        if spec.mode is GuidanceMode.PLAIN_CFG:
            s_c = s_T if spec.condition is Condition.TARGET else s_A
            if spec.condition is Condition.UNCONDITIONAL:
                s_c = s_u
            guided = s_u + spec.w * (s_c - s_u)
            gamma, terms = _step_gamma(spec, s_u, s_T, s_A)
        else:
            gamma, terms = _step_gamma(spec, s_u, s_T, s_A)
            guided = guide(s_u, s_T, s_A, spec.w, gamma)
        if spec.mode is GuidanceMode.ADAPTIVE_GAMMA:
            fallbacks += int(terms.fallback.sum())
        if record_trace:
            traces.append(
                StepTrace(
                    t, gamma, s_u, s_T, s_A, guided, terms.dot_rT_d, terms.norm_d_sq,
                    terms.fallback, spec.w, spec.mode is GuidanceMode.ADAPTIVE_GAMMA,
                    spec.reduce, spec.clamp,
                )
            )
        # beta of the (possibly strided) transition t -> previous timestep
        beta = 1.0 - a / a_prev
        if spec.sampler == "ddpm":
            x = (x + beta * guided) / np.sqrt(1.0 - beta)
            if i > 0:
                x = x + np.sqrt(beta) * rng.standard_normal(x.shape)
        else:
            x0 = (x + (1.0 - a) * guided) / np.sqrt(a)
            eps = -np.sqrt(1.0 - a) * guided
            x = np.sqrt(a_prev) * x0 + np.sqrt(1.0 - a_prev) * eps
    return x, traces, fallbacks


def aapb_sample(
    src: ScoreSource,
    spec: GuidanceSpec,
    schedule: NoiseSchedule,
    n: int,
    rng,
    timesteps=None,
    record_trace: bool = True,
    chunk_size: int | None = None,
    threads: int = 1,
) -> SampleResult:
    """Ancestral sampling with the blended guided score.

    Starts from ``x_T ~ N(0, I)`` and walks ``timesteps`` (default: every step
    of ``schedule``) downwards. With ``chunk_size`` set, trajectories are split
    into fixed chunks with their own spawned generators so the output does not
    depend on ``threads``.
    """
    rng = np.random.default_rng(rng)
    timesteps = (
        np.arange(1, schedule.num_steps + 1) if timesteps is None else np.asarray(timesteps)
    )
    if np.any(np.diff(timesteps) <= 0):
        raise ValueError("timesteps must be strictly increasing")
    if chunk_size is None or spec.reduce == "batch_mean" or chunk_size >= n:
        x, traces, fb = _run_chunk(src, spec, schedule, timesteps, n, rng, record_trace)
        return SampleResult(x, traces, fb)

    sizes = [min(chunk_size, n - s) for s in range(0, n, chunk_size)]
    rngs = rng.spawn(len(sizes))

    def work(k):
        return _run_chunk(src, spec, schedule, timesteps, sizes[k], rngs[k], record_trace)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(k) for k in range(len(sizes))]
    x = np.concatenate([p[0] for p in parts])
    traces = []
    if record_trace:
        for j, first in enumerate(parts[0][1]):
            chunks = [p[1][j] for p in parts]
            traces.append(
                StepTrace(
                    first.t,
                    *(np.concatenate([getattr(c, f) for c in chunks]) for f in (
                        "gamma", "s_u", "s_T", "s_A", "guided", "dot_rT_d", "norm_d_sq", "fallback",
                    )),
                    w=first.w,
                    adaptive=first.adaptive,
                    reduce=first.reduce,
                    clamp=first.clamp,
                )
            )
    return SampleResult(x, traces, sum(p[2] for p in parts))


def fisher_pointwise_dominance(
    src: ScoreSource,
    target_score_fn: Callable | None,
    x,
    t,
    w,
    gamma_probe,
    tol: float = 1e-12,
) -> bool:
    """True iff the adaptive gamma's squared score error is within ``tol`` of, or below, the probe's.

    ``target_score_fn(x, t)`` is the reference target score; ``None`` uses the
    source's own target branch.
    """
    s_u, s_T, s_A = _three_scores(src, x, t)
    ref = s_T if target_score_fn is None else target_score_fn(x, t)
    g_star = gamma_terms(s_u, s_T, s_A, w).gamma

    def err(g):
        diff = guide(s_u, s_T, s_A, w, g) - ref
        return np.sum(diff * diff, axis=-1)

    return bool(np.all(err(g_star) <= err(np.broadcast_to(gamma_probe, np.shape(g_star))) + tol))
