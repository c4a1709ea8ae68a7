"""Command line interface.

    irbindiff <stage> --config <file> [--seed N] [--ablate FLAG]...

Stages: synth, prepare, pretrain, train, embed, eval. Exit codes: 0 on
success, 1 on configuration/input/usage errors, 2 on internal failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback

from .config import load_config
from .errors import IRBinDiffError
from .pipeline import STAGES

ABLATIONS = ("no_norm", "no_plm", "no_graph")

_STAGE_HELP = {
    "synth": "generate the synthetic IR corpus",
    "prepare": "parse, simplify and filter the corpus; build the vocabulary",
    "pretrain": "build the masked corpus and pretrain the language model",
    "train": "train the momentum-contrast function encoder",
    "embed": "encode every function with the trained encoder",
    "eval": "write the AUC / recall@k / MRR report, CSV and figures",
}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; we reserve 2 for internal bugs."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="irbindiff",
                     description="binary function similarity over "
                                 "decompiled LLVM-IR")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=_STAGE_HELP[name])
        p.add_argument("--config", required=True,
                       help="path to a key = value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        p.add_argument("--ablate", action="append", choices=ABLATIONS,
                       default=[], metavar="FLAG",
                       help=f"enable an ablation ({', '.join(ABLATIONS)}); "
                            f"repeatable")
        p.add_argument("-v", "--verbose", action="store_true",
                       help="debug logging")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        for flag in args.ablate:
            setattr(cfg, flag, True)
        STAGES[args.stage](cfg)
        return 0
    except IRBinDiffError as exc:
        print(f"irbindiff {args.stage}: error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
