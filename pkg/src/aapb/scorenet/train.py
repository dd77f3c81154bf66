"""Denoising score matching in noise-prediction form, with condition dropout."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..analytic import GaussianMixture, toy_mixture
from ..schedule import NoiseSchedule
from .net import Condition, NetConfig, ScoreNet

__all__ = [
    "TrainConfig",
    "TrainLog",
    "TrainingDivergedError",
    "Adam",
    "eps_loss",
    "make_batch",
    "train",
]

logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    steps: int = 20000
    p_drop: float = 0.1
    seed: int = 0
    dataset: GaussianMixture = field(default_factory=toy_mixture)
    labels: tuple = (Condition.ANCHOR, Condition.TARGET)
    net: NetConfig = field(default_factory=NetConfig)
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    lr_min_ratio: float = 0.1
    val_size: int = 4096
    grad_workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("p_drop must lie in [0, 1)")
        if self.batch_size <= 0 or self.steps <= 0 or self.learning_rate <= 0:
            raise ValueError("batch_size, steps and learning_rate must be positive")
        if len(self.labels) != len(self.dataset.components):
            raise ValueError("need one condition label per mixture component")
        if not 0.0 < self.lr_min_ratio <= 1.0:
            raise ValueError("lr_min_ratio must lie in (0, 1]")
        object.__setattr__(self, "labels", tuple(Condition.parse(c) for c in self.labels))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"] = self.dataset.to_dict()
        d["labels"] = [c.name for c in self.labels]
        d["net"] = self.net.to_dict()
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["dataset"] = GaussianMixture.from_dict(d["dataset"])
        d["labels"] = tuple(Condition.parse(c) for c in d["labels"])
        d["net"] = NetConfig(**d["net"])
        d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)

    def hash(self, schedule: NoiseSchedule | None = None) -> str:
        # grad_workers only changes summation order, not the training problem
        payload = {k: v for k, v in self.to_dict().items() if k != "grad_workers"}
        if schedule is not None:
            payload["schedule"] = schedule.to_dict()
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainLog:
    losses: np.ndarray
    val_loss_init: float
    val_loss_final: float
    dropout_events: int
    wall_seconds: float
    config_hash: str


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def eps_loss(eps_hat, eps):
    """Mean over the batch of ``||eps_hat - eps||^2`` and its gradient w.r.t. ``eps_hat``."""
    diff = eps_hat - eps
    n = diff.shape[0]
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def make_batch(config: TrainConfig, schedule: NoiseSchedule, n: int, rng: np.random.Generator):
    """Draw ``(x_t, t, cond, eps, dropped)`` for one training batch."""
    x0, comp = config.dataset.sample(n, rng, return_labels=True)
    labels = np.array([int(c) for c in config.labels])[comp]
    dropped = rng.random(n) < config.p_drop
    cond = np.where(dropped, int(Condition.UNCONDITIONAL), labels)
    t = rng.integers(1, schedule.num_steps + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    a = schedule.alpha_bars[t - 1][:, None]
    xt = np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps
    return xt, t, cond, eps, dropped


def loss_and_grads(net: ScoreNet, batch, workers: int = 1):
    xt, t, cond, eps = batch[:4]
    if workers <= 1:
        out, cache = net.forward(xt, t, cond)
        loss, d_out = eps_loss(out, eps)
        return loss, net.backward(cache, d_out)

    n = xt.shape[0]
    chunks = np.array_split(np.arange(n), workers)

    def work(idx):
        out, cache = net.forward(xt[idx], t[idx], cond[idx])
        diff = out - eps[idx]
        return float(np.sum(diff * diff)), net.backward(cache, 2.0 * diff / n)

    with ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(work, chunks))
    grads = {k: sum(p[1][k] for p in parts) for k in net.params}
    return sum(p[0] for p in parts) / n, grads


def train(config: TrainConfig, schedule: NoiseSchedule | None = None) -> ScoreNet:
    """Fit a fresh :class:`ScoreNet`; the returned net carries a :class:`TrainLog`.

    Deterministic given ``config`` (including its seed) when ``grad_workers == 1``.
    """
    schedule = schedule or NoiseSchedule.linear()
    seed_seq = np.random.SeedSequence(config.seed)
    init_seq, data_seq, val_seq = seed_seq.spawn(3)
    net = ScoreNet(config.net, rng=np.random.default_rng(init_seq))
    rng = np.random.default_rng(data_seq)
    val_batch = make_batch(config, schedule, config.val_size, np.random.default_rng(val_seq))

    def val_loss():
        return eps_loss(net(*val_batch[:3]), val_batch[3])[0]

    opt = Adam(net.params, config.learning_rate, config.adam_betas, config.adam_eps)
    losses = np.empty(config.steps)
    dropped_total = 0
    start = time.perf_counter()
    val_init = val_loss()
    for step in range(config.steps):
        batch = make_batch(config, schedule, config.batch_size, rng)
        dropped_total += int(batch[4].sum())
        loss, grads = loss_and_grads(net, batch, config.grad_workers)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became {loss} at step {step} (lr={config.learning_rate}); "
                "the learning rate is probably too high"
            )
        losses[step] = loss
        # cosine decay from lr to lr * lr_min_ratio
        frac = step / max(config.steps - 1, 1)
        lr = config.learning_rate * (
            config.lr_min_ratio + (1 - config.lr_min_ratio) * 0.5 * (1 + np.cos(np.pi * frac))
        )
        opt.step(net.params, grads, lr)
        if step % 5000 == 0:
            logger.info("step %d loss %.5f", step, loss)
    net.train_log = TrainLog(
        losses=losses,
        val_loss_init=val_init,
        val_loss_final=val_loss(),
        dropout_events=dropped_total,
        wall_seconds=time.perf_counter() - start,
        config_hash=config.hash(schedule),
    )
    return net
