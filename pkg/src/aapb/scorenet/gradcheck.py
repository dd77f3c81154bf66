from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import ScoreNet
from .train import eps_loss

__all__ = ["GradCheckReport", "grad_check", "numerical_grads"]


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    per_param: dict
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def _loss(net: ScoreNet, batch) -> float:
    xt, t, cond, eps = batch[:4]
    return eps_loss(net(xt, t, cond), eps)[0]


def numerical_grads(net: ScoreNet, batch, step: float = 1e-5) -> dict:
    """Central differences of the training loss w.r.t. every parameter entry."""
    grads = {}
    for name, p in net.params.items():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = _loss(net, batch)
            flat[i] = orig - step
            minus = _loss(net, batch)
            flat[i] = orig
            g.reshape(-1)[i] = (plus - minus) / (2 * step)
        grads[name] = g
    return grads


def grad_check(
    net: ScoreNet,
    batch,
    analytic: dict | None = None,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    floor: float = 1e-7,
) -> GradCheckReport:
    """Compare backprop gradients (or the supplied ``analytic`` dict) with finite differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    entries that are zero in both from reporting noise.
    """
    if analytic is None:
        xt, t, cond, eps = batch[:4]
        out, cache = net.forward(xt, t, cond)
        analytic = net.backward(cache, eps_loss(out, eps)[1])
    numeric = numerical_grads(net, batch, step)
    per_param = {}
    for name in net.params:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        per_param[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    worst = max(per_param, key=per_param.get)
    return GradCheckReport(per_param[worst], worst, per_param, tolerance)
