"""``apnea-screen`` command line.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 model error.  Errors
are printed to stderr as a single ``CODE: message`` line.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import pipeline
from .config import load_config, validate
from .errors import ScreenError


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="random seed (overrides config)")
    common.add_argument("--workers", type=int, help="subject-level worker processes")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--data", help="data root with one directory per subject")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="apnea-screen", parents=[common],
                                description="Single-lead ECG sleep apnea screening.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("preprocess", parents=[common], help="segment, gate and featurise records")
    t = sub.add_parser("train", parents=[common], help="train the sleep or respiration model")
    t.add_argument("--task", required=True, choices=["sleep", "resp", "respiration"])
    pr = sub.add_parser("predict", parents=[common], help="per-epoch predictions and AHI report")
    pr.add_argument("--subject", help="subject id (default: every cached subject)")
    sub.add_parser("evaluate", parents=[common], help="metrics and plots against annotations")
    sub.add_parser("report", parents=[common], help="collect AHI reports into one table")
    return p


def _config(args):
    cfg = load_config(getattr(args, "config", None))
    opt = vars(args)
    overrides = {"seed": opt.get("seed"), "workers": opt.get("workers"),
                 "out_dir": opt.get("out"), "data_root": opt.get("data")}
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return validate(cfg)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "preprocess":
            text = pipeline.cmd_preprocess(cfg)
        elif args.command == "train":
            text = pipeline.cmd_train(cfg, args.task)
        elif args.command == "predict":
            text = pipeline.cmd_predict(cfg, args.subject)
        elif args.command == "evaluate":
            text = pipeline.cmd_evaluate(cfg)
        else:
            text = pipeline.cmd_report(cfg)
    except ScreenError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    sys.stdout.write(text)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
