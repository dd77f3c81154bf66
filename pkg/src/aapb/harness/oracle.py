"""Bundled numerical oracle checks with a CSV + text report."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..analytic import (
    TOY_ANCHOR,
    TOY_TARGET,
    IsotropicGaussian,
    gaussian_fisher_divergence,
    gaussian_w2_squared,
    log_concavity_constant,
    perturbed_posterior_mean,
    perturbed_score,
    toy_mixture,
)
from ..guidance import AnalyticScoreSource, adaptive_gamma, alignment_loss, gamma_terms, guide
from ..metrics import displacement, minimum_alignment_loss, w2_exact
from ..schedule import (
    NoiseSchedule,
    NoisyState,
    denoiser_score_gap_factor,
    score_from_eps,
    tweedie_posterior_mean,
    tweedie_posterior_mean_from_eps,
)
from ..scorenet.gradcheck import grad_check
from ..scorenet.net import NetConfig, ScoreNet
from ..scorenet.train import TrainConfig, make_batch
from .records import csv_text

__all__ = [
    "CheckResult",
    "OracleReport",
    "golden_section",
    "run_oracle_suite",
    "NEGATIVE_CONTROLS",
    "check_gamma_vs_grid",
    "check_w2_oracle",
    "check_pointwise_dominance",
    "check_transport_information",
]

NEGATIVE_CONTROLS = ("flip_gamma_sign",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0


@dataclass
class OracleReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_csv(self) -> str:
        cols = ("name", "passed", "measured", "tolerance", "seconds", "detail")
        return csv_text(cols, ([getattr(c, k) for k in cols] for c in self.checks))

    def summary(self) -> str:
        lines = [
            f"{'PASS' if c.passed else 'FAIL'}  {c.name:<28} measured={c.measured:.3e} "
            f"tol={c.tolerance:.1e}  {c.detail}"
            for c in self.checks
        ]
        n_ok = sum(c.passed for c in self.checks)
        lines.append(f"{n_ok}/{len(self.checks)} checks passed")
        return "\n".join(lines)


def golden_section(f: Callable, lo=-1.0, hi=1.0, xtol: float = 1e-13, max_iter: int = 300):
    """Minimise unimodal scalar functions elementwise.

    ``f`` maps an array of abscissae to an array of values (one problem per
    entry). Brackets are widened until they contain a minimum, then shrunk by
    the golden ratio. Array dtype follows ``lo``/``hi``.
    """
    lo = np.array(lo, copy=True)
    hi = np.array(hi, copy=True)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_lo, f_mid, f_hi = f(lo), f(mid), f(hi)
        left = f_lo < f_mid
        right = ~left & (f_hi < f_mid)
        if not (left.any() or right.any()):
            break
        width = hi - lo
        lo = np.where(left, lo - width, lo)
        hi = np.where(right, hi + width, hi)
    invphi = (np.sqrt(lo.dtype.type(5)) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if np.all(b - a <= xtol * np.maximum(1.0, np.abs(a) + np.abs(b))):
            break
        left = fc <= fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        c_new = b - invphi * (b - a)
        d_new = a + invphi * (b - a)
        # reuse the surviving interior point, evaluate the new one
        c, d = np.where(left, c_new, d), np.where(left, c, d_new)
        probe = np.where(left, c, d)
        fp = f(probe)
        fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)
    return 0.5 * (a + b)


def random_score_triples(n: int, rng: np.random.Generator, dim: int = 2):
    s_u, s_T, s_A = (rng.standard_normal((n, dim)) * 3.0 for _ in range(3))
    w = rng.uniform(0.2, 10.0, n)
    return s_u, s_T, s_A, w


def check_gamma_vs_grid(n=10_000, seed=0, gamma_fn=None) -> CheckResult:
    gamma_fn = gamma_fn or adaptive_gamma
    rng = np.random.default_rng(seed)
    s_u, s_T, s_A, w = random_score_triples(n, rng)
    g = np.array([gamma_fn(s_u[i], s_T[i], s_A[i], w[i]) for i in range(n)], dtype=np.float64)
    # extended precision keeps the line search from stalling on flat losses
    ld = [x.astype(np.longdouble) for x in (s_u, s_T, s_A, w[:, None])]
    zeros = np.zeros(n, dtype=np.longdouble)
    ref = golden_section(lambda x: alignment_loss(*ld, x), zeros - 1, zeros + 1)
    worst = float(np.max(np.abs(g - ref)))
    l_star = alignment_loss(s_u, s_T, s_A, w[:, None], g)
    violations = 0
    for probe in np.linspace(-2, 2, 41):
        violations += int(np.sum(l_star > alignment_loss(s_u, s_T, s_A, w[:, None], np.full(n, probe))))
    return CheckResult(
        "gamma_star_vs_golden_section", worst < 1e-6 and violations == 0, worst, 1e-6,
        f"{violations} probe violations over {n} instances",
    )


def check_tweedie(n=1000, seed=1) -> CheckResult:
    rng = np.random.default_rng(seed)
    schedule = NoiseSchedule.linear()
    mix = toy_mixture()
    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, schedule.num_steps + 1))
        x0 = mix.sample(1, rng)[0]
        a = schedule.alpha_bar(t)
        state = NoisyState(np.sqrt(a) * x0 + np.sqrt(1 - a) * rng.standard_normal(2), t)
        exact = perturbed_posterior_mean(mix, state, schedule)
        via_score = tweedie_posterior_mean(state, perturbed_score(mix, state, schedule), schedule)
        worst = max(worst, float(np.max(np.abs(exact - via_score))))
    return CheckResult("tweedie_posterior_mean", worst < 1e-10, worst, 1e-10, f"{n} random states")


def check_gap_factor(n=1000, seed=2) -> CheckResult:
    rng = np.random.default_rng(seed)
    schedule = NoiseSchedule.linear()
    worst = 0.0
    for _ in range(n):
        t = int(rng.integers(1, schedule.num_steps + 1))
        state = NoisyState(rng.standard_normal(2) * 3, t)
        s1, s2 = rng.standard_normal(2) * 3, rng.standard_normal(2) * 3
        gap_mu = np.sum(
            (tweedie_posterior_mean(state, s1, schedule) - tweedie_posterior_mean(state, s2, schedule)) ** 2
        )
        gap_s = denoiser_score_gap_factor(t, schedule) * np.sum((s1 - s2) ** 2)
        worst = max(worst, abs(gap_mu - gap_s) / max(1.0, gap_s))
        # noise-prediction form of the same mean
        eps = rng.standard_normal(2)
        a = tweedie_posterior_mean_from_eps(state, eps, schedule)
        b = tweedie_posterior_mean(state, score_from_eps(eps, t, schedule), schedule)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return CheckResult("denoiser_score_gap_identity", worst < 1e-10, worst, 1e-10)


def check_gradients(seed=3) -> CheckResult:
    rng = np.random.default_rng(seed)
    net = ScoreNet(NetConfig(hidden_width=4, depth=2, time_embed_dim=4, cond_embed_dim=3), rng=rng)
    for k in net.params:
        if k.startswith("b"):
            net.params[k] = rng.standard_normal(net.params[k].shape) * 0.1
    cfg = TrainConfig(net=net.config, p_drop=0.3)
    batch = make_batch(cfg, NoiseSchedule.linear(), 16, rng)
    rep = grad_check(net, batch)
    return CheckResult("finite_difference_gradients", rep.passed, rep.max_rel_error, rep.tolerance,
                       f"worst parameter {rep.worst_param}")


def check_w2_oracle(n=4096, seed=4) -> CheckResult:
    rng = np.random.default_rng(seed)
    a, b = TOY_ANCHOR, TOY_TARGET
    emp = w2_exact(a.sample(n, rng), b.sample(n, rng)) ** 2
    exact = gaussian_w2_squared(a, b)
    rel = abs(emp - exact) / exact
    return CheckResult("w2_exact_vs_gaussian", rel < 0.1, rel, 0.1, f"empirical {emp:.4f} vs {exact:.4f}")


def check_displacement(n=10_000, seed=5) -> CheckResult:
    rng = np.random.default_rng(seed)
    s_u, s_T, s_A, w = random_score_triples(n, rng)
    worst = 0.0
    for i in range(n):
        rep = displacement(s_u[i], s_T[i], s_A[i])
        d = s_A[i] - s_T[i]
        scale = max(1.0, float(d @ d))
        worst = max(
            worst,
            abs(float(rep.d_par @ rep.d_perp)) / scale,
            float(np.max(np.abs(rep.d_par + rep.d_perp - d))) / math.sqrt(scale),
            abs(float(d @ d) - rep.norm_par**2 - rep.norm_perp**2) / scale,
        )
        g = gamma_terms(s_u[i], s_T[i], s_A[i], w[i]).gamma
        l_min = minimum_alignment_loss(s_u[i], s_T[i], s_A[i], w[i])
        l_at = alignment_loss(s_u[i], s_T[i], s_A[i], w[i], g)
        worst = max(worst, abs(l_min - l_at) / max(1.0, l_at))
    return CheckResult("displacement_identities", worst < 1e-10, worst, 1e-10, f"{n} random inputs")


def check_pointwise_dominance(n=100_000, seed=6, gamma_fn=None) -> CheckResult:
    rng = np.random.default_rng(seed)
    s_u, s_T, s_A, w = random_score_triples(n, rng)
    terms = gamma_terms(s_u, s_T, s_A, w)
    g_star = terms.gamma if gamma_fn is None else gamma_fn(s_u, s_T, s_A, w)
    err_star = np.sum((guide(s_u, s_T, s_A, w[:, None], g_star) - s_T) ** 2, axis=1)
    worst = -np.inf
    for probe in np.linspace(-2, 2, 21):
        err = np.sum((guide(s_u, s_T, s_A, w[:, None], np.full(n, probe)) - s_T) ** 2, axis=1)
        worst = max(worst, float(np.max(err_star - err)))
    return CheckResult("pointwise_score_dominance", worst <= 1e-12, worst, 1e-12,
                       f"{n} configurations x 21 probes")


def check_transport_information(n=500, seed=7) -> CheckResult:
    rng = np.random.default_rng(seed)
    p = TOY_TARGET
    k = log_concavity_constant(p)
    worst = -np.inf
    for _ in range(n):
        a = rng.standard_normal((2, 2))
        cov = a @ a.T + 0.05 * np.eye(2)
        mean = rng.standard_normal(2) * 4
        w2 = gaussian_w2_squared((mean, cov), p)
        j = gaussian_fisher_divergence((mean, cov), p)
        worst = max(worst, w2 - j / k**2)
    return CheckResult("w2_le_fisher_over_k2", worst <= 1e-12, worst, 1e-12, f"k={k:.4f}, {n} Gaussians")


def check_fisher_projection(n=4000, seed=8) -> CheckResult:
    """Analytic toy sources: MC Fisher estimate with gamma* never exceeds any fixed gamma."""
    rng = np.random.default_rng(seed)
    schedule = NoiseSchedule.linear()
    src = AnalyticScoreSource.toy(schedule)
    worst = -np.inf
    for t in (50, 200, 500, 800, 1000):
        a = schedule.alpha_bar(t)
        x = TOY_TARGET.perturbed(a).sample(n, rng)
        s_u, s_T, s_A = src.scores(x, t)
        w = 3.0
        g_star = gamma_terms(s_u, s_T, s_A, w).gamma
        j_star = np.mean(np.sum((guide(s_u, s_T, s_A, w, g_star) - s_T) ** 2, axis=1))
        for g in np.round(np.arange(0.0, 1.01, 0.1), 1):
            j = np.mean(np.sum((guide(s_u, s_T, s_A, w, g) - s_T) ** 2, axis=1))
            worst = max(worst, j_star - j)
    return CheckResult("fisher_projection_vs_grid", worst <= 1e-12, worst, 1e-12)


def run_oracle_suite(negative_control: str | None = None, quick: bool = False) -> OracleReport:
    """Run every oracle check.

    ``negative_control="flip_gamma_sign"`` swaps in a deliberately wrong gamma
    so the gamma checks must fail. ``quick`` shrinks sample counts.
    """
    if negative_control not in (None,) + NEGATIVE_CONTROLS:
        raise ValueError(f"unknown negative control {negative_control!r}")
    gamma_fn = None
    if negative_control == "flip_gamma_sign":
        def gamma_fn(s_u, s_T, s_A, w):
            return -gamma_terms(s_u, s_T, s_A, w).gamma

    scale = 10 if quick else 1
    checks = [
        lambda: check_gamma_vs_grid(10_000 // scale, gamma_fn=gamma_fn),
        lambda: check_tweedie(1000 // scale),
        lambda: check_gap_factor(1000 // scale),
        check_gradients,
        lambda: check_w2_oracle(1024 if quick else 4096),
        lambda: check_displacement(10_000 // scale),
        lambda: check_pointwise_dominance(100_000 // scale, gamma_fn=gamma_fn),
        check_transport_information,
        check_fisher_projection,
    ]
    report = OracleReport()
    for check in checks:
        t0 = time.perf_counter()
        res = check()
        res.seconds = time.perf_counter() - t0
        report.checks.append(res)
    return report
