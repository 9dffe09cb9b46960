"""Command-line entry point: ``cpinn <experiment> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import experiments
from .config import coerce, defaults_for, load_config, reduced_inverse
from .errors import CpinnError

log = logging.getLogger("cpinn")


def _alpha_list(text: str) -> tuple[float, ...]:
    return coerce("alphas", text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file (CLI flags override it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, default=Path("runs"), help="output root directory")
    common.add_argument("--label", help="run directory name (default: timestamp)")
    common.add_argument("--noise", type=float, help="Gaussian noise sigma")
    common.add_argument("--alpha", type=_alpha_list, help="comma-separated miscoverage levels")
    common.add_argument("--trials", type=int, help="repeated-split trials")
    common.add_argument("--workers", type=int, help="parallel processes for PINN fits")
    common.add_argument("--no-plots", action="store_true", help="skip SVG output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cpinn", description="Conformalized PINN experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("forward-logistic", parents=[common], help="logistic ODE forward problem")
    sub.add_parser("forward-bl", parents=[common], help="Buckley-Leverett forward problem")
    inv = sub.add_parser("inverse", parents=[common], help="inverse problem for the growth rate")
    inv.add_argument("--reduced", action="store_true", help="200 records and 100 fresh tests")
    inv.add_argument("--equispaced", action="store_true", help="equispaced true betas instead of sampling")
    inv.add_argument("--datasets", type=int, help="number of holdout records (calibration sizes follow at 80%%)")
    inv.add_argument("--fresh-tests", type=int, help="fresh test datasets (0 disables)")
    cov = sub.add_parser("coverage", parents=[common], help="coverage of a saved prediction CSV")
    cov.add_argument("predictions", type=Path, help="CSV with input, truth, prediction columns")
    return parser


def resolve_config(args):
    cfg = load_config(args.config, args.command) if args.config else defaults_for(args.command)
    overrides = {"seed": args.seed, "noise": args.noise, "alphas": args.alpha, "trials": args.trials,
                 "workers": args.workers}
    if args.no_plots:
        overrides["plots"] = False
    if args.command == "inverse":
        if args.reduced:
            cfg = reduced_inverse(cfg)
        if args.equispaced:
            overrides["beta_sampling"] = "equispaced"
        if args.datasets is not None:
            # keep the 80/20 calibration share when only the record count is given
            n_c = int(round(0.8 * args.datasets))
            overrides.update(n_datasets=args.datasets, split_n_c=n_c, split_n_v=args.datasets - n_c,
                             fresh_n_c=n_c)
        overrides["fresh_tests"] = args.fresh_tests
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if args.command != "coverage":
        cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        label = args.label or time.strftime("%Y%m%dT%H%M%S")
        outdir = args.out / args.command / label
        if args.command == "forward-logistic":
            outcome = experiments.cmd_forward_logistic(cfg, outdir)
            summary = outcome.summary
        elif args.command == "forward-bl":
            outcome = experiments.cmd_forward_bl(cfg, outdir)
            summary = outcome.summary
        elif args.command == "inverse":
            summary = experiments.cmd_inverse(cfg, outdir).summary
        else:
            reports = experiments.cmd_coverage(cfg, args.predictions, outdir)
            summary = {f"alpha={a:g}": f"{r.final:.5f} (theory {r.theoretical:.5f})" for a, r in reports.items()}
    except CpinnError as exc:
        print(f"cpinn: {exc.category} error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cpinn: io error: {exc}", file=sys.stderr)
        return 3
    for key, value in summary.items():
        print(f"{key}\t{value}")
    print(f"outputs written to {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
