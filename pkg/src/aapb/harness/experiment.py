"""The 2D toy reproduction: train once, sweep fixed gammas and the adaptive rule, score with W2."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..guidance import GuidanceSpec, NetScoreSource, aapb_sample, gamma_terms, guide
from ..metrics import SampleSet, w2_exact, w2_sinkhorn
from ..scorenet.checkpoint import load_checkpoint, save_checkpoint
from ..scorenet.net import ScoreNet
from ..scorenet.train import train
from .config import RunConfig
from .records import METRIC_COLUMNS, RunRecord, source_hash, write_csv, write_samples, write_trace

__all__ = ["Cell", "train_or_load", "run_cell", "run_toy_experiment", "summarize", "cell_key"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Cell:
    w: float
    seed: int
    gamma: float | None  # None means adaptive

    @property
    def mode(self) -> str:
        return "adaptive" if self.gamma is None else "fixed"

    def spec(self, config: RunConfig) -> GuidanceSpec:
        kw = dict(reduce=config.sweep.reduce, clamp=config.sweep.clamp, sampler=config.sweep.sampler)
        if self.gamma is None:
            return GuidanceSpec.adaptive(self.w, **kw)
        return GuidanceSpec.fixed(self.w, self.gamma, sampler=config.sweep.sampler)


def cell_key(cell: Cell) -> str:
    g = "adaptive" if cell.gamma is None else f"g{cell.gamma:+.3f}"
    return f"w{cell.w:g}_s{cell.seed}_{g}"


def _cells(config: RunConfig) -> list:
    cells = []
    for w in config.sweep.w_values:
        for seed in config.seeds:
            cells.extend(Cell(w, seed, g) for g in config.sweep.gammas)
            if config.sweep.adaptive:
                cells.append(Cell(w, seed, None))
    return cells


def train_or_load(config: RunConfig, cache_dir: Path | None = None) -> ScoreNet:
    """Trained net for ``config``; reuses a checkpoint keyed by the training hash.

    With ``do_train`` false the configured checkpoint must exist.
    """
    schedule = config.schedule.build()
    if not config.do_train:
        path = Path(config.checkpoint)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint {path} not found and training is disabled")
        return load_checkpoint(path)[0]
    key = config.train.hash(schedule)
    if cache_dir is not None:
        path = Path(cache_dir) / f"net-{key}.ckpt"
        if path.exists():
            net, meta = load_checkpoint(path)
            if meta.get("train_hash") == key:
                net.cached_losses = meta.get("losses", [])
                return net
    net = train(config.train, schedule)
    if cache_dir is not None:
        save_checkpoint(
            net,
            Path(cache_dir) / f"net-{key}.ckpt",
            {
                "train_hash": key,
                "train_config": config.train.to_dict(),
                "losses": net.train_log.losses.tolist(),
                "val_loss_init": net.train_log.val_loss_init,
                "val_loss_final": net.train_log.val_loss_final,
            },
        )
    return net


def _cell_rng(cell: Cell, role: int) -> np.random.Generator:
    # Same seed -> same initial noise for every gamma (common random numbers).
    return np.random.default_rng(np.random.SeedSequence([cell.seed, role]))


def target_draws(config: RunConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    return config.evaluation.target.sample(config.evaluation.n_target, rng)


def run_cell(config: RunConfig, src: NetScoreSource, cell: Cell, record_trace: bool = False):
    """Sample one sweep cell and score it; returns ``(metrics_row, samples, traces)``."""
    schedule = src.schedule
    spec = cell.spec(config)
    res = aapb_sample(
        src, spec, schedule, config.evaluation.n_samples, _cell_rng(cell, 0),
        timesteps=config.schedule.sampling_timesteps(), record_trace=record_trace,
    )
    samples = res.samples
    target = target_draws(config, cell.seed)
    n = min(len(samples), len(target))
    w2 = w2_exact(samples[:n], target[:n])
    if config.evaluation.sinkhorn_reg > 0:
        w2 = w2_sinkhorn(samples[:n], target[:n], config.evaluation.sinkhorn_reg).value

    # Diagnostics at the least-noisy level, on the generated points.
    t1 = int(config.schedule.sampling_timesteps()[0])
    s_u, s_T, s_A = src.scores(samples, t1)
    fisher = float("nan")
    if config.evaluation.fisher:
        # approximate: the guided score stands in for grad log q
        gamma = spec.gamma if cell.gamma is not None else gamma_terms(s_u, s_T, s_A, cell.w).gamma
        a = schedule.alpha_bar(t1)
        p_score = config.evaluation.target.perturbed(a).score(samples)
        gap = guide(s_u, s_T, s_A, cell.w, gamma) - p_score
        fisher = float(np.mean(np.sum(gap * gap, axis=1)))
    u = s_u - s_T
    d = s_A - s_T
    uu = np.sum(u * u, axis=1)
    ok = uu > 1e-24
    coef = np.sum(d * u, axis=1)[ok] / uu[ok]
    d_par = coef[:, None] * u[ok]
    d_perp = d[ok] - d_par
    row = {
        "run_id": config.hash(),
        "gamma_mode": cell.mode,
        "gamma": float("nan") if cell.gamma is None else cell.gamma,
        "w": cell.w,
        "seed": cell.seed,
        "n": n,
        "w2": w2,
        "w2_sd": float("nan"),
        "fisher_j": fisher,
        "disp_par": float(np.mean(np.linalg.norm(d_par, axis=1))) if ok.any() else float("nan"),
        "disp_perp": float(np.mean(np.linalg.norm(d_perp, axis=1))) if ok.any() else float("nan"),
    }
    return row, samples, res.traces


def _fill_sd(rows: list) -> None:
    groups = {}
    for r in rows:
        groups.setdefault((r["gamma_mode"], repr(r["gamma"]), r["w"]), []).append(r["w2"])
    for r in rows:
        vals = groups[(r["gamma_mode"], repr(r["gamma"]), r["w"])]
        r["w2_sd"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def summarize(metrics: list) -> list:
    """Mean and sd of W2 across seeds per (mode, gamma, w), in sweep order."""
    out, seen = [], {}
    for r in metrics:
        key = (r["gamma_mode"], repr(r["gamma"]), r["w"])
        if key not in seen:
            seen[key] = {"gamma_mode": r["gamma_mode"], "gamma": r["gamma"], "w": r["w"], "vals": []}
            out.append(seen[key])
        seen[key]["vals"].append(r["w2"])
    for s in out:
        v = np.array(s.pop("vals"))
        s["w2_mean"] = float(v.mean())
        s["w2_sd"] = float(v.std(ddof=1)) if v.size > 1 else 0.0
        s["n_seeds"] = int(v.size)
    return out


def run_toy_experiment(config: RunConfig, out_dir=None, net: ScoreNet | None = None) -> RunRecord:
    """Train (or load) the toy net, run every sweep cell, write CSVs, the record and plots."""
    start = time.perf_counter()
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = config.schedule.build()
    if net is None:
        net = train_or_load(config, cache_dir=out / "checkpoints")
    if net.train_log is not None:
        losses = net.train_log.losses.tolist()
    else:
        losses = list(getattr(net, "cached_losses", []))
    src = NetScoreSource(net, schedule)
    cells = _cells(config)
    first_seed = config.seeds[0]

    def work(cell):
        trace = cell.gamma is None and cell.seed == first_seed
        return run_cell(config, src, cell, record_trace=trace)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]

    metrics, samples, sample_hashes, traces = [], {}, {}, {}
    for cell, (row, pts, tr) in zip(cells, results):
        metrics.append(row)
        key = cell_key(cell)
        rel = f"samples/{key}.csv"
        write_samples(out / rel, pts)
        samples[key] = rel
        sample_hashes[key] = SampleSet(pts).content_hash()
        if tr:
            trel = f"traces/{key}.csv"
            write_trace(out / trel, tr, config.evaluation.trace_max_samples)
            traces[key] = trel
    _fill_sd(metrics)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics)
    summary = summarize(metrics)
    write_csv(
        out / "summary.csv", ("gamma_mode", "gamma", "w", "w2_mean", "w2_sd", "n_seeds"), summary
    )
    record = RunRecord(
        config=config.to_dict(),
        config_hash=config.hash(),
        code_hash=source_hash(),
        train_hash=config.train.hash(schedule) if config.do_train else f"file:{config.checkpoint}",
        train_losses=losses,
        metrics=metrics,
        samples=samples,
        sample_hashes=sample_hashes,
        traces=traces,
        wall_seconds=time.perf_counter() - start,
        out_dir=str(out),
    )
    record.save(out)
    if config.plots:
        from .plots import emit_plots

        emit_plots(record)
    logger.info("toy experiment finished in %.1fs", record.wall_seconds)
    return record

