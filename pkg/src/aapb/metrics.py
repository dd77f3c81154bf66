"""Sample-based evaluation: Wasserstein distances, Fisher divergence, anchor displacement."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

__all__ = [
    "SampleSet",
    "SinkhornResult",
    "DisplacementReport",
    "DegenerateResidual",
    "SampleSizeError",
    "w2_exact",
    "w2_sinkhorn",
    "match_sizes",
    "fisher_divergence",
    "displacement",
    "minimum_alignment_loss",
]

MAX_EXACT_SIZE = 4096


class SampleSizeError(ValueError):
    pass


class DegenerateResidual(ArithmeticError):
    """``s_u`` and ``s_T`` coincide, so there is no residual direction to project on."""


@dataclass(frozen=True)
class SampleSet:
    points: np.ndarray
    config_hash: str = ""
    seed: int | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.shape[0] == 0:
            raise ValueError("sample set is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("sample set contains non-finite points")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    def content_hash(self) -> str:
        return hashlib.sha256(self.points.astype("<f8").tobytes()).hexdigest()[:16]


def _points(a) -> np.ndarray:
    return a.points if isinstance(a, SampleSet) else SampleSet(a).points


def match_sizes(a, b, rng=None):
    """Subsample the larger set without replacement so both have the same size."""
    a, b = _points(a), _points(b)
    if len(a) == len(b):
        return a, b
    rng = np.random.default_rng(rng)
    n = min(len(a), len(b))
    if len(a) > n:
        a = a[np.sort(rng.choice(len(a), n, replace=False))]
    else:
        b = b[np.sort(rng.choice(len(b), n, replace=False))]
    return a, b


def _sq_cost(a, b):
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)


def w2_exact(a, b) -> float:
    """Empirical 2-Wasserstein distance between equal-size uniform point clouds.

    Solves the optimal assignment exactly under squared Euclidean cost.
    """
    a, b = _points(a), _points(b)
    if len(a) != len(b):
        raise SampleSizeError(f"sizes differ ({len(a)} vs {len(b)}); use match_sizes first")
    if len(a) > MAX_EXACT_SIZE:
        raise SampleSizeError(f"exact solver limited to {MAX_EXACT_SIZE} points")
    # Translating either cloud only adds row/column constants to the cost, so the
    # optimal matching of the centred clouds is optimal for the originals too;
    # the solver runs much faster on overlapping clouds.
    rows, cols = linear_sum_assignment(_sq_cost(a - a.mean(axis=0), b - b.mean(axis=0)))
    cost = np.sum((a[rows] - b[cols]) ** 2, axis=-1)
    return float(np.sqrt(cost.mean()))


@dataclass(frozen=True)
class SinkhornResult:
    value: float
    converged: bool
    iterations: int
    marginal_error: float

    def __float__(self):
        return self.value


def w2_sinkhorn(a, b, reg: float = 0.01, iterations: int = 2000, tol: float = 1e-9,
                relative: bool = True) -> SinkhornResult:
    """Entropic OT estimate of W2 (no debiasing), via log-domain Sinkhorn.

    ``reg`` is the entropic weight; with ``relative=True`` it is scaled by the
    mean pairwise cost so one value behaves similarly across data scales.
    Returns ``sqrt(<P, C>)`` for the regularised plan ``P``.
    """
    if not reg > 0:
        raise ValueError("regularisation must be positive")
    a, b = _points(a), _points(b)
    cost = _sq_cost(a, b)
    eps = reg * (cost.mean() if relative and cost.mean() > 0 else 1.0)
    log_mu = np.full(len(a), -np.log(len(a)))
    log_nu = np.full(len(b), -np.log(len(b)))
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    err = np.inf
    it = 0
    for it in range(1, iterations + 1):
        f = -eps * logsumexp((g[None, :] - cost) / eps + log_nu[None, :], axis=1)
        g = -eps * logsumexp((f[:, None] - cost) / eps + log_mu[:, None], axis=0)
        if it % 10 == 0 or it == iterations:
            log_p = (f[:, None] + g[None, :] - cost) / eps + log_mu[:, None] + log_nu[None, :]
            err = float(np.abs(np.exp(logsumexp(log_p, axis=1)) - np.exp(log_mu)).sum())
            if err < tol:
                break
    log_p = (f[:, None] + g[None, :] - cost) / eps + log_mu[:, None] + log_nu[None, :]
    value = float(np.sqrt(max(np.sum(np.exp(log_p) * cost), 0.0)))
    converged = err < tol
    if not converged:
        warnings.warn(f"Sinkhorn did not converge in {iterations} iterations (err={err:.2e})")
    return SinkhornResult(value, converged, it, err)


def fisher_divergence(q_samples, q_score_fn, target) -> float:
    """Monte-Carlo ``E_q ||grad log q - grad log p||^2`` over ``q_samples``.

    ``target`` is either a callable score or any object with a ``score(x)``
    method (the analytic distributions qualify).
    """
    x = _points(q_samples)
    p_score = target if callable(target) else target.score
    gap = np.asarray(q_score_fn(x)) - np.asarray(p_score(x))
    return float(np.mean(np.sum(gap * gap, axis=-1)))


@dataclass(frozen=True)
class DisplacementReport:
    d: np.ndarray
    d_par: np.ndarray
    d_perp: np.ndarray

    @property
    def norm_par(self) -> float:
        return float(np.linalg.norm(self.d_par))

    @property
    def norm_perp(self) -> float:
        return float(np.linalg.norm(self.d_perp))

    @property
    def total(self) -> float:
        return self.norm_par + self.norm_perp


def displacement(s_u, s_T, s_A, tol: float = 1e-12) -> DisplacementReport:
    """Split ``d = s_A - s_T`` into parts parallel and orthogonal to ``s_u - s_T``."""
    s_u, s_T, s_A = (np.asarray(s, dtype=np.float64) for s in (s_u, s_T, s_A))
    u = s_u - s_T
    uu = float(u @ u)
    if np.sqrt(uu) <= tol:
        raise DegenerateResidual("||s_u - s_T|| is zero")
    d = s_A - s_T
    d_par = (float(d @ u) / uu) * u
    return DisplacementReport(d, d_par, d - d_par)


def minimum_alignment_loss(s_u, s_T, s_A, w) -> float:
    """Smallest attainable alignment loss: ``||r||^2 - <r, d>^2 / ||d||^2``."""
    s_u, s_T, s_A = (np.asarray(s, dtype=np.float64) for s in (s_u, s_T, s_A))
    r = (1.0 - w) * (s_u - s_T)
    d = s_A - s_T
    return float(r @ r - (r @ d) ** 2 / (d @ d))
