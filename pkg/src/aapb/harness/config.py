"""TOML run configuration.

Every table and key is checked against the schema below; unknown keys raise
:class:`ConfigError` so typos fail loudly. See ``configs/toy.toml`` for a
fully spelled-out example.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli

from ..analytic import GaussianMixture, IsotropicGaussian, TOY_TARGET, toy_mixture
from ..schedule import NoiseSchedule
from ..scorenet.net import Condition, NetConfig
from ..scorenet.train import TrainConfig

__all__ = [
    "ConfigError",
    "ScheduleConfig",
    "SweepConfig",
    "EvalConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "deterministic_mode",
]


class ConfigError(ValueError):
    pass


def deterministic_mode() -> bool:
    return os.environ.get("AAPB_DETERMINISTIC", "") == "1"


def _default_gammas():
    return tuple(round(0.1 * i, 10) for i in range(11))


@dataclass(frozen=True)
class ScheduleConfig:
    kind: str = "linear"
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    sample_steps: int = 100

    def build(self) -> NoiseSchedule:
        if self.kind == "linear":
            return NoiseSchedule.linear(self.num_steps, self.beta_start, self.beta_end)
        return NoiseSchedule.from_config(self.kind, self.num_steps)

    def sampling_timesteps(self) -> np.ndarray:
        return self.build().sampling_timesteps(self.sample_steps)


@dataclass(frozen=True)
class SweepConfig:
    w_values: tuple = (3.0,)
    gammas: tuple = field(default_factory=_default_gammas)
    adaptive: bool = True
    reduce: str = "per_sample"
    clamp: bool = False
    sampler: str = "ddpm"

    def __post_init__(self):
        if not self.w_values or any(not w > 0 for w in self.w_values):
            raise ConfigError("guidance.w must be a nonempty list of positive values")
        g = np.asarray(self.gammas, dtype=np.float64)
        if g.size == 0 or np.any(np.diff(g) <= 0) or not np.all(np.isfinite(g)):
            raise ConfigError("guidance.gammas must be finite and strictly increasing")


@dataclass(frozen=True)
class EvalConfig:
    n_samples: int = 2000
    n_target: int = 2000
    target: IsotropicGaussian = TOY_TARGET
    fisher: bool = True
    sinkhorn_reg: float = 0.0
    trace_max_samples: int = 256

    def __post_init__(self):
        if self.n_samples <= 0 or self.n_target <= 0:
            raise ConfigError("evaluation sample counts must be positive")


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: str = "runs/toy"
    do_train: bool = True
    checkpoint: str = ""
    threads: int = 1
    plots: bool = True

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "schedule": self.schedule.__dict__.copy(),
            "dataset": {
                **self.train.dataset.to_dict(),
                "labels": [c.name.lower() for c in self.train.labels],
            },
            "train": {
                "enabled": self.do_train,
                "checkpoint": self.checkpoint,
                **{
                    k: v
                    for k, v in self.train.to_dict().items()
                    if k not in ("dataset", "labels", "net")
                },
            },
            "net": self.train.net.to_dict(),
            "guidance": {
                "w": list(self.sweep.w_values),
                "gammas": list(self.sweep.gammas),
                "adaptive": self.sweep.adaptive,
                "reduce": self.sweep.reduce,
                "clamp": self.sweep.clamp,
                "sampler": self.sweep.sampler,
            },
            "evaluation": {
                "n_samples": self.evaluation.n_samples,
                "n_target": self.evaluation.n_target,
                "target_mean": list(self.evaluation.target.mean),
                "target_scale": self.evaluation.target.scale,
                "fisher": self.evaluation.fisher,
                "sinkhorn_reg": self.evaluation.sinkhorn_reg,
                "trace_max_samples": self.evaluation.trace_max_samples,
            },
            "run": {"threads": self.threads, "plots": self.plots},
        }

    def hash(self) -> str:
        """Hash of everything that affects results (not paths or thread counts)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("run")
        d["train"].pop("checkpoint")
        d["train"].pop("grad_workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, seed=None, output_dir=None, threads=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=(int(seed),), train=replace(cfg.train, seed=int(seed)))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        if threads is not None:
            cfg = replace(cfg, threads=int(threads))
        if deterministic_mode():
            cfg = replace(cfg, threads=1, train=replace(cfg.train, grad_workers=1))
        return cfg


_SCHEMA = {
    "seeds": None,
    "output_dir": None,
    "schedule": {"kind", "num_steps", "beta_start", "beta_end", "sample_steps"},
    "dataset": {"components", "labels"},
    "train": {
        "enabled", "checkpoint", "batch_size", "learning_rate", "steps", "p_drop", "seed",
        "adam_betas", "adam_eps", "lr_min_ratio", "val_size", "grad_workers",
    },
    "net": {"dim", "hidden_width", "depth", "time_embed_dim", "cond_embed_dim", "bias"},
    "guidance": {"w", "gammas", "adaptive", "reduce", "clamp", "sampler"},
    "evaluation": {
        "n_samples", "n_target", "target_mean", "target_scale", "fisher", "sinkhorn_reg",
        "trace_max_samples",
    },
    "run": {"threads", "plots"},
}
_COMPONENT_KEYS = {"weight", "mean", "scale"}


def _check_keys(where: str, got, allowed) -> None:
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def parse_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    _check_keys("top level", data, _SCHEMA)
    for section, keys in _SCHEMA.items():
        if keys is not None and section in data:
            if not isinstance(data[section], dict):
                raise ConfigError(f"[{section}] must be a table")
            _check_keys(f"[{section}]", data[section], keys)

    try:
        sched = ScheduleConfig(**data.get("schedule", {}))
        sched.build()

        ds = data.get("dataset", {})
        if "components" in ds:
            for c in ds["components"]:
                _check_keys("[[dataset.components]]", c, _COMPONENT_KEYS)
            dataset = GaussianMixture.from_dict({"components": ds["components"]})
        else:
            dataset = toy_mixture()
        labels = tuple(Condition.parse(c) for c in ds.get("labels", ("anchor", "target")))

        tr = dict(data.get("train", {}))
        do_train = bool(tr.pop("enabled", True))
        checkpoint = str(tr.pop("checkpoint", ""))
        if "adam_betas" in tr:
            tr["adam_betas"] = tuple(tr["adam_betas"])
        net = NetConfig(**data.get("net", {}))
        train = TrainConfig(dataset=dataset, labels=labels, net=net, **tr)

        g = dict(data.get("guidance", {}))
        if "w" in g:
            w = g.pop("w")
            g["w_values"] = tuple(float(v) for v in (w if isinstance(w, list) else [w]))
        if "gammas" in g:
            g["gammas"] = tuple(float(v) for v in g["gammas"])
        sweep = SweepConfig(**g)

        ev = dict(data.get("evaluation", {}))
        tmean = ev.pop("target_mean", TOY_TARGET.mean)
        tscale = ev.pop("target_scale", TOY_TARGET.scale)
        evaluation = EvalConfig(target=IsotropicGaussian(tmean, tscale), **ev)

        run = data.get("run", {})
        seeds = tuple(int(s) for s in data.get("seeds", (0, 1, 2, 3, 4)))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc

    if checkpoint and base_dir is not None and not Path(checkpoint).is_absolute():
        checkpoint = str((base_dir / checkpoint).resolve())
    if not do_train and not checkpoint:
        raise ConfigError("train.enabled = false needs train.checkpoint")
    for v in (sched.beta_start, sched.beta_end):
        if not math.isfinite(v):
            raise ConfigError("schedule betas must be finite")

    return RunConfig(
        schedule=sched,
        train=train,
        sweep=sweep,
        evaluation=evaluation,
        seeds=seeds,
        output_dir=str(data.get("output_dir", "runs/toy")),
        do_train=do_train,
        checkpoint=checkpoint,
        threads=int(run.get("threads", 1)),
        plots=bool(run.get("plots", True)),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, base_dir=path.parent)
