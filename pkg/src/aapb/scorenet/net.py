"""Conditional noise-prediction MLP with hand-written reverse-mode gradients."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from ..schedule import NoiseSchedule, NoisyState, score_from_eps

__all__ = ["Condition", "NetConfig", "ScoreNet", "sinusoidal_embedding", "silu"]


class Condition(enum.IntEnum):
    """Row index into the condition-embedding table; 0 is the null (dropped) token."""

    UNCONDITIONAL = 0
    TARGET = 1
    ANCHOR = 2

    @classmethod
    def parse(cls, value) -> "Condition":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise ValueError(f"unknown condition {value!r}") from None
        return cls(int(value))


def sinusoidal_embedding(t, dim: int, max_period: float = 10000.0) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * _sigmoid(x)


def _silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


@dataclass(frozen=True)
class NetConfig:
    dim: int = 2
    hidden_width: int = 128
    depth: int = 3
    time_embed_dim: int = 32
    cond_embed_dim: int = 8
    bias: bool = True

    def __post_init__(self):
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        if min(self.dim, self.hidden_width, self.depth, self.time_embed_dim, self.cond_embed_dim) < 1:
            raise ValueError("all network sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class ScoreNet:
    """MLP ``(x, emb(t), emb(cond)) -> eps_hat`` with SiLU hidden layers.

    Parameters live in an ordered dict of float64 arrays; ``forward`` returns
    the prediction together with the cache that ``backward`` needs.
    """

    def __init__(self, config: NetConfig | None = None, rng=None, params: dict | None = None):
        self.config = config or NetConfig()
        if params is None:
            params = self._init_params(np.random.default_rng(rng))
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.train_log = None
        shapes = self.param_shapes()
        if list(self.params) != list(shapes) or any(
            self.params[k].shape != s for k, s in shapes.items()
        ):
            raise ValueError("parameter names/shapes do not match the network config")

    def param_shapes(self) -> dict:
        c = self.config
        shapes = {"cond_embed": (len(Condition), c.cond_embed_dim)}
        widths = [c.dim + c.time_embed_dim + c.cond_embed_dim] + [c.hidden_width] * c.depth + [c.dim]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"W{i}"] = (fan_in, fan_out)
            if c.bias:
                shapes[f"b{i}"] = (fan_out,)
        return shapes

    def _init_params(self, rng: np.random.Generator) -> dict:
        params = {}
        for name, shape in self.param_shapes().items():
            if name == "cond_embed":
                params[name] = rng.standard_normal(shape)
            elif name.startswith("W"):
                params[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
            else:
                params[name] = np.zeros(shape)
        return params

    @property
    def num_layers(self) -> int:
        return self.config.depth + 1

    @property
    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params.values()])

    def set_flat_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params:
            raise ValueError(f"expected {self.num_params} values, got {flat.size}")
        offset = 0
        for name, p in self.params.items():
            self.params[name] = flat[offset : offset + p.size].reshape(p.shape).copy()
            offset += p.size

    def copy(self) -> "ScoreNet":
        return ScoreNet(self.config, params={k: v.copy() for k, v in self.params.items()})

    def _inputs(self, x, t, cond):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        cond = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,))
        temb = sinusoidal_embedding(t, self.config.time_embed_dim)
        cemb = self.params["cond_embed"][cond]
        return np.concatenate([x, temb, cemb], axis=1), cond

    def forward(self, x, t, cond):
        h, cond = self._inputs(x, t, cond)
        pre_acts, acts = [], [h]
        for i in range(self.num_layers):
            z = h @ self.params[f"W{i}"]
            if self.config.bias:
                z = z + self.params[f"b{i}"]
            if i < self.num_layers - 1:
                pre_acts.append(z)
                h = silu(z)
                acts.append(h)
            else:
                h = z
        return h, (acts, pre_acts, cond)

    def backward(self, cache, d_out) -> dict:
        """Gradients of a scalar loss given ``d_out = dL/d eps_hat``."""
        acts, pre_acts, cond = cache
        grads = {}
        g = np.asarray(d_out, dtype=np.float64)
        for i in reversed(range(self.num_layers)):
            if i < self.num_layers - 1:
                g = g * _silu_grad(pre_acts[i])
            grads[f"W{i}"] = acts[i].T @ g
            if self.config.bias:
                grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        c = self.config
        d_cemb = g[:, c.dim + c.time_embed_dim :]
        d_table = np.zeros_like(self.params["cond_embed"])
        np.add.at(d_table, cond, d_cemb)
        grads["cond_embed"] = d_table
        return {k: grads[k] for k in self.params}

    def __call__(self, x, t, cond) -> np.ndarray:
        return self.forward(x, t, cond)[0]

    def predict_eps(self, state: NoisyState, cond) -> np.ndarray:
        cond = Condition.parse(cond) if np.ndim(cond) == 0 else cond
        single = state.x.ndim == 1
        out = self.forward(state.x, state.t, cond)[0]
        return out[0] if single else out

    def predict_score(self, state: NoisyState, cond, schedule: NoiseSchedule) -> np.ndarray:
        return score_from_eps(self.predict_eps(state, cond), state.t, schedule)
