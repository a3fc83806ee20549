"""Command-line entry point: ``dapn <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .data import generate_toy_dataset, make_splits
from .training import (TrainConfig, evaluate, export_embeddings, load_config,
                       load_model, parse_config_text, run_ablation, train)

DEFAULT_DATA = "data/toy"
DEFAULT_RUN = "runs/dapn"


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="plain-text 'key = value' config file")
    g = p.add_argument_group("config overrides")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        names = [flag, "--steps"] if f.name == "total_steps" else [flag]
        g.add_argument(*names, dest=f"cfg_{f.name}", metavar=f.name.upper(),
                       default=None)


def _config(args) -> TrainConfig:
    lines = [f"{k[4:]} = {v}" for k, v in vars(args).items()
             if k.startswith("cfg_") and v is not None]
    overrides = parse_config_text("\n".join(lines))
    if args.config and not Path(args.config).is_file():
        raise FileNotFoundError(f"config not found: {args.config}")
    return load_config(args.config, **overrides)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dapn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="write the synthetic two-domain dataset")
    p.add_argument("--out", default=DEFAULT_DATA)
    p.add_argument("--classes", type=int, nargs=3, default=(8, 4, 4),
                   metavar=("SOURCE", "FEWSHOT", "TEST"))
    p.add_argument("--samples", type=int, default=60)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--filter", default="edge_sketch")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", default=DEFAULT_DATA)
    p.add_argument("--out", default=DEFAULT_RUN)
    p.add_argument("--progress-every", type=int, default=0)
    _add_config_flags(p)

    p = sub.add_parser("eval", help="episodic evaluation of a checkpoint")
    p.add_argument("--checkpoint", default=f"{DEFAULT_RUN}/model.pt")
    p.add_argument("--data", default=DEFAULT_DATA)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--way", type=int, default=5)
    p.add_argument("--shot", type=int, default=1)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write the report as JSON here")

    p = sub.add_parser("ablate", help="train and compare loss variants")
    p.add_argument("--data", default=DEFAULT_DATA)
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--variants", nargs="+",
                   default=["FSL", "FSL+DC", "FSL+DC+DS", "Full"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--queries", type=int, default=15)
    p.add_argument("--eval-seed", type=int, default=12345)
    _add_config_flags(p)

    p = sub.add_parser("export-embeddings",
                       help="dump pre/post-embedding features with domains")
    p.add_argument("--checkpoint", default=f"{DEFAULT_RUN}/model.pt")
    p.add_argument("--data", default=DEFAULT_DATA)
    p.add_argument("--out", default="embeddings.tsv")
    p.add_argument("--max-per-domain", type=int)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_make_toy(args) -> None:
    root = generate_toy_dataset(args.out, tuple(args.classes), args.samples,
                                args.size, args.seed, args.filter)
    src, few, test = args.classes
    print(f"wrote {root}: classes source={src} fewshot={few} test={test}")


def _cmd_train(args) -> None:
    cfg = _config(args)
    split = make_splits(args.data, k=cfg.k, image_size=cfg.input_size)
    res = train(cfg, split=split, out_dir=args.out,
                progress_every=args.progress_every)
    first, last = res.metrics[0], res.metrics[-1]
    print(f"steps={len(res.metrics)} lps={first['lps']:.4f}->"
          f"{last['lps']:.4f} checkpoint={res.checkpoints[-1]}")


def _cmd_eval(args) -> None:
    model, cfg = load_model(args.checkpoint)
    split = make_splits(args.data, k=cfg.k, image_size=cfg.input_size)
    rep = evaluate(model, split.test_pool, args.episodes, args.way, args.shot,
                   args.queries, args.seed, cfg.dist)
    print(f"top1={rep.mean_top1:.6f} ci95={rep.ci95:.6f}")
    if args.json:
        Path(args.json).write_text(rep.to_json() + "\n")


def _cmd_ablate(args) -> None:
    cfg = _config(args)
    rows = run_ablation(cfg, args.data, args.variants, args.seeds, args.out,
                        args.episodes, args.way, args.shot, args.queries,
                        args.eval_seed)
    for r in rows:
        print(f"{r.variant}\ttop1={r.mean_top1:.6f}\tci95={r.ci95:.6f}")


def _cmd_export(args) -> None:
    model, cfg = load_model(args.checkpoint)
    split = make_splits(args.data, k=cfg.k, image_size=cfg.input_size)
    n = export_embeddings(model, split, args.out, args.max_per_domain,
                          args.seed)
    print(f"wrote {n} rows to {args.out}")


COMMANDS = {"make-toy": _cmd_make_toy, "train": _cmd_train,
            "eval": _cmd_eval, "ablate": _cmd_ablate,
            "export-embeddings": _cmd_export}


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else \
            type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
