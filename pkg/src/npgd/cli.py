"""Command-line entry point.

    npgd genmask|gendata|train|reconstruct|baseline|analyze|sweep
         --config <path> [--out <dir>] [--seed N] [--threads N]

Output directory precedence: --out, then $NPGD_OUT, then the config's
out_dir. --seed overrides every seed in the config (data, mask, training)
for quick variation without editing files. Exit codes: 0 success, 1
runtime/numeric failure, 2 config/contract error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import experiment
from .config import parse_config
from .errors import NpgdError

COMMANDS = ("genmask", "gendata", "train", "reconstruct", "baseline",
            "analyze", "sweep")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npgd")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
    return parser


def _resolve_out(args, cfg) -> str:
    if args.out:
        return args.out
    env = os.environ.get("NPGD_OUT")
    if env:
        return env
    return cfg.out_dir


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    log = lambda msg: print(msg, flush=True)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, data_seed=args.seed,
                                      mask_seed=args.seed, train_seed=args.seed)
        if args.threads is not None:
            cfg = dataclasses.replace(cfg, threads=args.threads)
        cfg.validate()
        out_dir = _resolve_out(args, cfg)
        if args.command == "genmask":
            info = experiment.run_genmask(cfg, out_dir)
            log(f"mask: {info['popcount']} samples -> {info['pgm']}, {info['bits']}")
        elif args.command == "gendata":
            info = experiment.run_gendata(cfg, out_dir)
            log(f"dataset: {info['count']} images -> {info['dir']}")
        elif args.command == "train":
            info = experiment.run_train(cfg, out_dir, log=log)
            log(f"trained in {info['seconds']:.1f}s, final loss {info['final_loss']:.6g}")
            log(f"checkpoint: {info['checkpoint']}")
        elif args.command == "reconstruct":
            info = experiment.run_reconstruct(cfg, out_dir)
            log(f"mean SNR {info['mean_snr']:.2f} dB "
                f"(zero-filled {info['mean_snr_zf']:.2f} dB) -> {info['metrics']}")
        elif args.command == "baseline":
            info = experiment.run_baseline(cfg, out_dir, log=log)
            log(f"CS baseline (lambda={info['lambda']:.4g}): "
                f"mean SNR {info['mean_snr']:.2f} dB -> {info['metrics']}")
        elif args.command == "analyze":
            info = experiment.run_analyze(cfg, out_dir)
            n_conv = sum(r[1] for r in info["debias"])
            log(f"analyzed {len(info['traces'])} samples -> {info['out_dir']} "
                f"(debias converged on {n_conv}/{len(info['debias'])})")
        elif args.command == "sweep":
            info = experiment.run_sweep(cfg, out_dir, log=log)
            log(f"sweep -> {info['sweep']}")
        return 0
    except NpgdError as exc:
        print(f"npgd: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"npgd: i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
