"""Command-line entry point.

Usage::

    torus-secagg run --preset table2-mnist --out results/
    torus-secagg run --config my.cfg --runs 5 --seed 7
    torus-secagg presets

Exit codes: 0 on success, 1 for an invalid config or unknown preset, 2 when
the dataset cannot be found.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from typing import List, Optional

from .errors import ConfigurationError, DataFormatError
from .experiment import (
    FULL_SCALE,
    PRESETS,
    DatasetUnavailable,
    ExperimentConfig,
    get_preset,
    load_config,
    run_experiment,
    validate_config,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATASET = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="torus-secagg", description="Secure aggregation on the real torus.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write CSV reports")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", help="named experiment (see 'presets')")
    source.add_argument("--config", help="key = value config file")
    run.add_argument("--out", help="output directory (default: results/<name>)")
    run.add_argument("--runs", type=int, help="independent runs per cell")
    run.add_argument("--rounds", type=int, help="federated rounds per run")
    run.add_argument("--seed", type=int, help="base seed; run r uses seed + r")
    run.add_argument("--deterministic", action="store_true", help="use the configured seed (default for presets)")
    run.add_argument("--precision", type=int, choices=(32, 64), help="torus value precision in bits")
    run.add_argument("--mnist-dir", help="directory with the MNIST IDX files (for dataset = mnist)")
    run.add_argument(
        "--full-scale",
        action="store_true",
        help="full MNIST, 30 rounds, 10 runs, lr 0.01, batch 64 (needs --mnist-dir or $TORUS_SECAGG_MNIST_DIR)",
    )
    run.add_argument("--quiet", action="store_true", help="do not print the summary table")

    sub.add_parser("presets", help="list named experiments")
    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = get_preset(args.preset) if args.preset else load_config(args.config)
    updates = {}
    if args.full_scale:
        updates.update(FULL_SCALE)
    for key in ("runs", "rounds", "seed", "precision", "mnist_dir"):
        value = getattr(args, key)
        if value is not None:
            updates[key] = value
    if args.deterministic:
        updates["deterministic"] = True
    updates["out"] = args.out or (cfg.out if args.config else f"results/{cfg.name}")
    return replace(cfg, **updates)


def _print_summary(result) -> None:
    print(f"{'K':>3} {'mode':<13} {'L_or_p':>12} {'d':>2} {'accuracy':>16} {'cosine_vs_plain':>22}")
    for c in result.cells:
        acc = sum(c.final_accuracy) / len(c.final_accuracy)
        cos = sum(c.final_cosine) / len(c.final_cosine)
        print(f"{c.K:>3} {c.mode:<13} {c.L_or_p:>12} {c.d:>2} {acc:>16.4f} {cos:>22.15f}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name in sorted(PRESETS):
            cfg = PRESETS[name]
            arms = ", ".join(a.mode + (f"(L={a.L})" if a.mode == "torus" else f"(p={a.p},d={a.d})") for a in cfg.arms)
            print(f"{name:<14} dataset={cfg.dataset} K={list(cfg.K)} rounds={cfg.rounds} runs={cfg.runs} arms: {arms}")
        return EXIT_OK

    try:
        cfg = _resolve_config(args)
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"invalid config: {p}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(cfg)
    except DatasetUnavailable as exc:
        print(f"dataset unavailable: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except DataFormatError as exc:
        print(f"dataset unreadable: {exc}", file=sys.stderr)
        return EXIT_DATASET
    if not args.quiet:
        _print_summary(result)
        print(f"seeds: {result.seeds}")
        for kind, path in result.files.items():
            print(f"{kind}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
