"""Command-line entry point: ``aapb {train,sample,sweep,oracle,plot}``.

Exit status is 0 on success, 1 when a check fails and 2 for usage or input
errors (bad flags, bad config, missing files).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .guidance import GuidanceSpec, NetScoreSource, aapb_sample
from .harness.config import ConfigError, RunConfig, load_config
from .harness.experiment import run_toy_experiment, train_or_load
from .harness.oracle import NEGATIVE_CONTROLS, run_oracle_suite
from .harness.plots import emit_plots
from .harness.records import RunRecord, atomic_write, write_csv, write_samples, write_trace
from .scorenet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("aapb")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer: {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _common(p: argparse.ArgumentParser, out_default: str | None = None) -> None:
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--seed", type=_u64, help="override the seed list with a single seed")
    p.add_argument("--out", type=Path, default=out_default, help="output directory")
    p.add_argument("--threads", type=_positive_int, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aapb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the toy score network and write a checkpoint")
    _common(p)

    p = sub.add_parser("sample", help="sample from a checkpoint; writes samples.csv and trace.csv")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="checkpoint file (default: train from config)")
    p.add_argument("--mode", choices=("adaptive", "fixed", "plain"), default="adaptive")
    p.add_argument("--gamma", type=float, help="blend weight for --mode fixed")
    p.add_argument("--w", type=float, help="guidance scale (default: first value in config)")
    p.add_argument("--n", type=_positive_int, help="number of samples")

    p = sub.add_parser("sweep", help="run the full toy experiment")
    _common(p)

    p = sub.add_parser("oracle", help="run the numerical oracle suite")
    _common(p)
    p.add_argument("--negative-control", choices=NEGATIVE_CONTROLS,
                   help="inject a known bug; the affected checks must fail")
    p.add_argument("--quick", action="store_true", help="smaller sample counts")

    p = sub.add_parser("plot", help="re-emit SVG panels from a saved run record")
    _common(p)
    p.add_argument("record", type=Path, help="run directory or record.json")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed, output_dir=args.out, threads=args.threads)


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    net = train_or_load(cfg)
    log = net.train_log
    meta = {"train_hash": cfg.train.hash(cfg.schedule.build()), "train_config": cfg.train.to_dict()}
    if log is not None:
        meta.update(losses=log.losses.tolist(), val_loss_init=log.val_loss_init,
                    val_loss_final=log.val_loss_final)
        write_csv(out / "losses.csv", ("step", "loss"), enumerate(log.losses))
    path = save_checkpoint(net, out / "net.ckpt", meta)
    print(path)
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _config(args)
    if args.checkpoint is not None:
        net = load_checkpoint(args.checkpoint)[0]
    else:
        net = train_or_load(cfg, cache_dir=Path(cfg.output_dir) / "checkpoints")
    w = args.w if args.w is not None else cfg.sweep.w_values[0]
    if args.mode == "fixed":
        if args.gamma is None:
            raise ConfigError("--mode fixed needs --gamma")
        spec = GuidanceSpec.fixed(w, args.gamma, sampler=cfg.sweep.sampler)
    elif args.mode == "plain":
        spec = GuidanceSpec.plain(w, sampler=cfg.sweep.sampler)
    else:
        spec = GuidanceSpec.adaptive(w, reduce=cfg.sweep.reduce, clamp=cfg.sweep.clamp,
                                     sampler=cfg.sweep.sampler)
    schedule = cfg.schedule.build()
    n = args.n or cfg.evaluation.n_samples
    res = aapb_sample(
        NetScoreSource(net, schedule), spec, schedule, n,
        np.random.default_rng(np.random.SeedSequence([cfg.seeds[0], 0])),
        timesteps=cfg.schedule.sampling_timesteps(),
    )
    out = Path(cfg.output_dir)
    write_samples(out / "samples.csv", res.samples)
    write_trace(out / "trace.csv", res.traces, cfg.evaluation.trace_max_samples)
    print(out / "samples.csv")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    record = run_toy_experiment(cfg)
    print(Path(record.out_dir) / "metrics.csv")
    return EXIT_OK


def cmd_oracle(args) -> int:
    report = run_oracle_suite(negative_control=args.negative_control, quick=args.quick)
    if args.out is not None:
        atomic_write(args.out / "oracle.csv", report.to_csv())
        atomic_write(args.out / "oracle.txt", report.summary() + "\n")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_plot(args) -> int:
    record = RunRecord.load(args.record)
    for path in emit_plots(record, args.out):
        print(path)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, CheckpointError, ValueError) as exc:
        print(f"aapb {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
