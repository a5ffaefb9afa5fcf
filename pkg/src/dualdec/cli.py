"""Command-line entry point.

Commands: generate, train, grid-search, ablate, eval. Exit codes: 0 success,
1 failed command, 2 usage error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .errors import DualdecError
from .harness import (ExperimentConfig, cmd_ablate, cmd_eval, cmd_generate,
                      cmd_grid_search, cmd_train, parse_config_file)


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.replace(",", " ").split()]


def _add_common(parser: argparse.ArgumentParser, grid: bool = False) -> None:
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int, help="master seed (replica i uses seed+i)")
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--max-iter", type=int, dest="max_iter")
    parser.add_argument("--k", type=int, help="kNN neighbor count for feature datasets")
    parser.add_argument("--metric", choices=["euclidean", "cosine"],
                        help="kNN metric for feature datasets")
    if grid:
        parser.add_argument("--alpha", type=_float_list, default=None)
        parser.add_argument("--beta", type=_float_list, default=None)
        parser.add_argument("--gamma", type=_float_list, default=None)
    else:
        parser.add_argument("--alpha", type=float)
        parser.add_argument("--beta", type=float)
        parser.add_argument("--gamma", type=float)


def _build_config(args, grid: bool = False) -> ExperimentConfig:
    cfg = parse_config_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for attr, key in (("seed", "seed"), ("replicas", "replicas"), ("out", "out_dir"),
                      ("max_iter", "max_iter"), ("k", "knn_k"), ("metric", "knn_metric")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if not grid:
        for key in ("alpha", "beta", "gamma"):
            value = getattr(args, key, None)
            if value is not None:
                overrides[key] = value
    return replace(cfg, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualdec",
        description="Attributed-network deep embedded clustering toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic benchmark networks")
    _add_common(p)

    p = sub.add_parser("train", help="train and evaluate over replicas")
    _add_common(p)

    p = sub.add_parser("grid-search", help="train every coefficient combination")
    _add_common(p, grid=True)

    p = sub.add_parser("ablate", help="full model vs. the no-consistency variant")
    _add_common(p)

    p = sub.add_parser("eval", help="score a prediction file against labels")
    p.add_argument("labels", help="ground-truth label file, one integer per line")
    p.add_argument("pred", help="predicted label file, one integer per line")
    p.add_argument("--pairwise-f1", action="store_true", dest="pairwise_f1")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "eval":
            return cmd_eval(args.labels, args.pred, pairwise_f1=args.pairwise_f1)
        cfg = _build_config(args, grid=args.command == "grid-search")
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        if args.command == "grid-search":
            alphas = args.alpha if args.alpha is not None else [cfg.alpha]
            betas = args.beta if args.beta is not None else [cfg.beta]
            gammas = args.gamma if args.gamma is not None else [cfg.gamma]
            return cmd_grid_search(cfg, alphas, betas, gammas)
        raise AssertionError(f"unhandled command {args.command}")
    except DualdecError as exc:
        print(f"dualdec: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dualdec: error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
