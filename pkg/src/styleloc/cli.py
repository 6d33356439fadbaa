"""Command-line entry point: ``styleloc {gen-data,train,eval,dump,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route it to our usage code instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, seed_help: str, out_help: str) -> None:
    p.add_argument("--config", type=Path, help="run config JSON (defaults are used for missing sections)")
    p.add_argument("--seed", type=int, help=seed_help)
    p.add_argument("--out", type=Path, help=out_help)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="styleloc", description="Day/night stereo localization with a style-transform "
                                                  "network, learned keypoints and weighted SVD pose.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    _common(sub.add_parser("gen-data", help="render the synthetic dataset"),
            "dataset seed (overrides data.seed)", "dataset directory (overrides data.path)")
    _common(sub.add_parser("train", help="train one scheme"),
            "training seed (overrides train.seed)", "checkpoint directory (overrides train.checkpoint_dir)")
    _common(sub.add_parser("eval", help="evaluate a checkpoint on a dataset split"),
            "RANSAC seed (overrides matcher.ransac.seed)", "per-pair CSV report path (overrides eval.out)")
    _common(sub.add_parser("dump", help="write images and detector maps for one pair"),
            "RANSAC seed (unused by the dump itself; accepted for uniformity)", "output directory")
    _common(sub.add_parser("gradcheck", help="run the finite-difference gradient suite"),
            "input seed for the suite", "also write the suite results to this file")
    return parser


def _load(args) -> RunConfig:
    return RunConfig.load(args.config) if args.config else RunConfig()


def cmd_gen_data(args) -> int:
    from .synthdata import build_dataset

    cfg = _load(args).data()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.path = str(args.out)
    out = build_dataset(cfg)
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import train

    cfg = _load(args).train()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.checkpoint_dir = str(args.out)
    result = train(cfg)
    print(result["checkpoints"][-1])
    return EXIT_OK


def _networks(section):
    from .trainer import load_networks

    if not section.checkpoint:
        raise FileNotFoundError("no checkpoint given (set eval.checkpoint / dump.checkpoint)")
    nets, _ = load_networks(section.checkpoint, section.featnet_checkpoint)
    return nets


def cmd_eval(args) -> int:
    from .evaluate import evaluate
    from .synthdata import Dataset

    rc = _load(args)
    section = rc.eval()
    matcher = rc.matcher()
    if args.seed is not None:
        matcher.ransac.seed = args.seed
    nets = _networks(section)
    pairs = Dataset(rc.data().path).pairs(section.split, section.limit)
    report = evaluate(nets, pairs, matcher)
    out = Path(args.out or section.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)  # written even when every pair failed
    print(report.aggregate_line())
    return EXIT_OK


def cmd_dump(args) -> int:
    from .evaluate import dump_artifacts
    from .synthdata import Dataset

    rc = _load(args)
    section = rc.dump()
    nets = _networks(section)
    ds = Dataset(rc.data().path)
    ids = ds.split(section.split)
    pair_id = ids[section.pair] if isinstance(section.pair, int) else section.pair
    if pair_id not in ids:
        raise KeyError(f"pair {pair_id!r} not in split {section.split!r}")
    written = dump_artifacts(nets, ds.pair(pair_id), args.out or section.out)
    for name, path in written.items():
        print(f"{name},{path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradsuite

    ok, text = gradsuite.main(args.seed or 0)
    print(text)
    if args.out is not None:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "dump": cmd_dump,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"styleloc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
