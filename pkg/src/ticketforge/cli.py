"""Command-line entry point: ``ticketforge <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiment
from .config import ExperimentConfig, load_config, paper_preset
from .errors import ConfigError, DataError, NumericalError
from .report import report

log = logging.getLogger("ticketforge")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

SYNTHETIC_DEFAULT_DOMAINS = ("alpha", "beta")


def _seed_list(raw: str) -> tuple[int, ...]:
    seeds = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return tuple(seeds)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment configuration file")
    p.add_argument("--paper", action="store_true",
                   help="use the published vocabulary, model, pruning and optimizer settings")
    p.add_argument("--synthetic", action="store_true", help="generate synthetic domains")
    p.add_argument("--seed-list", type=_seed_list, help="seeds, e.g. 1,2,3 or 1-5")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--force", action="store_true", help="recompute completed cells")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ticketforge", description="Lottery-ticket pruning and transfer experiments for text CNNs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("build-vocab", help="train the shared subword vocabulary"))
    p = sub.add_parser("divergence", help="pairwise Jensen-Shannon divergence matrix")
    _common(p)
    p.add_argument("--scale", type=float, help="multiply reported values (e.g. 1e5)")
    _common(sub.add_parser("obtain", help="lottery-ticket runs per domain, strategy and seed"))
    _common(sub.add_parser("transfer", help="transfer source masks to target domains"))
    p = sub.add_parser("report", help="summaries, phase-transition scan and figures")
    p.add_argument("run_dirs", nargs="*", type=Path, help="experiment output directories")
    p.add_argument("--out", type=Path, help="report directory (default: <first run dir>/report)")
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--margin", type=float, default=0.02)
    p.add_argument("--factor", type=float, default=2.0)
    p.add_argument("--no-figures", action="store_true")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.paper:
        cfg = paper_preset(cfg)
    if args.synthetic:
        cfg = replace(cfg, synthetic=True)
        if not cfg.domains:
            cfg = replace(cfg, domains=SYNTHETIC_DEFAULT_DOMAINS)
    if args.seed_list:
        cfg = replace(cfg, seeds=args.seed_list)
    if args.out:
        cfg = replace(cfg, out=args.out)
    if getattr(args, "scale", None):
        cfg = replace(cfg, divergence_scale=args.scale)
    return cfg.validate()


def run(args) -> int:
    if args.command == "report":
        dirs = args.run_dirs or ([args.out] if args.out else [])
        res = report(dirs, args.out if args.run_dirs else None, args.window, args.margin,
                     args.factor, figures=not args.no_figures)
        print(f"summary: {res['out_dir'] / 'summary.csv'}")
        for ph in res["phases"]:
            t = ph["threshold"]
            print(f"phase transition {ph['experiment']} {ph['cell']}: "
                  f"{'none' if t is None else f'{t:.6f}'}")
        for f in res["figures"]:
            print(f"figure: {f}")
        return EXIT_OK

    cfg = resolve_config(args)
    if args.command == "build-vocab":
        vocab, coverage = experiment.build_vocab(cfg)
        print(f"vocabulary: {experiment.vocab_path(cfg)} size={vocab.size} "
              f"character coverage={coverage:.6f}")
    elif args.command == "divergence":
        names, matrix = experiment.divergence(cfg)
        print(f"divergence (nats x {cfg.divergence_scale:g}): {cfg.out / 'divergence.csv'}")
        width = max(len(n) for n in names)
        for n, row in zip(names, matrix):
            print(n.ljust(width), " ".join(f"{v * cfg.divergence_scale:12.6g}" for v in row))
    elif args.command == "obtain":
        records = experiment.obtain(cfg, force=args.force)
        print(f"obtain: {len(records)} records -> {cfg.out / 'obtain_records.csv'}")
    elif args.command == "transfer":
        records, phases = experiment.transfer(cfg, force=args.force)
        print(f"transfer: {len(records)} records -> {cfg.out / 'transfer_records.csv'}")
        for ph in phases:
            t = ph["threshold"]
            print(f"phase transition {ph['cell']}: {'none' if t is None else f'{t:.6f}'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
