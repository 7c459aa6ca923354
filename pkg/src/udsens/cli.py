"""Command-line entry point: ``udsens <subcommand> [flags]``.

Exit codes: 0 success, 1 acceptance-check failure, 2 usage or validation
error. Flags override the config file, which overrides built-in defaults.
"""

import argparse
import sys

import numpy as np

from . import experiments as ex
from .errors import DomainError, FilterError, ShapeError


def _delta_list(text):
    try:
        vals = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty delta list")
    return vals


def _u64(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config file")
    common.add_argument("--seed", type=_u64, help="root seed")
    common.add_argument("--replications", type=_positive_int)
    common.add_argument("--delta", type=_delta_list, metavar="LIST",
                        help="comma- or space-separated conditioning values")
    common.add_argument("--engine", choices=("ud", "conv", "both"))
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--full-scale", action="store_true", default=None,
                        help=f"run {ex.FULL_SCALE_REPLICATIONS} replications")
    common.add_argument("--n-steps", type=int, metavar="N")
    common.add_argument("--workers", type=_positive_int)

    parser = argparse.ArgumentParser(prog="udsens", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("verify-lemma", parents=[common],
                   help="check the MWGS derivative rule on the static example")
    sub.add_parser("scan", parents=[common], help="negative log-likelihood and gradient over a grid")
    sub.add_parser("monte-carlo", parents=[common], help="estimation sweep over delta")
    fr = sub.add_parser("filter-run", parents=[common], help="filter a stored trajectory")
    fr.add_argument("trajectory", help="CSV written by the simulate subcommand")
    fr.add_argument("--theta", type=_delta_list, metavar="LIST")
    sim = sub.add_parser("simulate", parents=[common], help="simulate and export a trajectory")
    sim.add_argument("--model", choices=("ins", "illcond"))
    sim.add_argument("--theta", type=_delta_list, metavar="LIST", help="true parameter")
    return parser


def resolve_config(args):
    """Merge defaults, the config file and command-line flags, in that order."""
    cfg = ex.load_config(args.config) if args.config else ex.ExperimentConfig()
    overrides = {"experiment": args.command}
    flag_map = {"seed": "seed", "replications": "replications", "delta": "deltas",
                "engine": "engine", "out": "out", "full_scale": "full_scale",
                "n_steps": "n_steps", "workers": "workers", "model": "model",
                "trajectory": "trajectory"}
    for flag, key in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    theta = getattr(args, "theta", None)
    if theta is not None:
        overrides["theta_true" if args.command == "simulate" else "theta"] = theta
    return ex.config_from_mapping(overrides, cfg).resolved()


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = resolve_config(args)
    except (ex.ConfigError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "verify-lemma":
            report = ex.cmd_verify_lemma(cfg)
            sys.stdout.write(report.text())
            return 0 if report.passed else 1
        if args.command == "scan":
            report = ex.cmd_scan(cfg)
            print(report.summary_line())
        elif args.command == "monte-carlo":
            report = ex.cmd_monte_carlo(cfg)
            sys.stdout.write(report.table())
        elif args.command == "filter-run":
            report = ex.cmd_filter_run(cfg)
            print(f"N={report.rows.shape[0]} loglik={report.loglik!r} "
                  f"gradient={np.array2string(report.gradient, precision=17)}")
        elif args.command == "simulate":
            traj = ex.cmd_simulate(cfg)
            print(f"wrote {traj.n_steps} samples to {cfg.out}/trajectory.csv")
    except (ex.ConfigError, DomainError, ShapeError, KeyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FilterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
