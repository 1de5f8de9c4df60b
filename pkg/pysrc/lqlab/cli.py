from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence

from loguru import logger

from lqlab.config import ExperimentConfig, load_config, resolve_output_root
from lqlab.enums import ExperimentKind
from lqlab.errors import ConfigError, Diverged, LqlabError, NotConverged
from lqlab.log import configure_logging
from lqlab.model import LqProblem, closed_loop_rate, riccati_residual, riccati_solve
from lqlab.runner import RunStatus, run_experiment
from lqlab.sweep import parse_values, sweep

EXIT_CONFIG = 1

_OUTPUTS = """\
output files (comma-separated, LF line endings, one header row each):
  log.csv       hjb-vi/hjb-pi: iteration,residual,sup_norm
                qlearn:        episode,max_abs_q,sup_error
                linfa:         step,weight_norm,bellman_residual
  fields.csv    node,x,value,policy,analytic_value,analytic_policy
  sweep.csv     value,converged,sup_error,trip_iteration,status
  report.json   run summary; probe.json, value.svg and policy.svg alongside

exit codes: 0 ok, 1 bad configuration, 2 diverged, 3 not converged.
the output root defaults to $LQLAB_OUT.
"""


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lqlab",
        description="Monotone and non-monotone dynamic programming on the 1D LQ problem.",
        epilog=_OUTPUTS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="more log output (repeatable)"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser(
        "run", help="run the experiment a config file describes",
        epilog=_OUTPUTS, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run.add_argument("config", help="path to a JSON config file")
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int, help="override the config's seed")

    sw = commands.add_parser(
        "sweep", help="run one experiment per value of a config key",
        epilog=_OUTPUTS, formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sw.add_argument("config", help="path to a JSON config file")
    sw.add_argument("--param", required=True, help="the dotted config key to vary")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--jobs", type=int, default=1, help="runs to execute at once")
    sw.add_argument("--out", help="output directory")
    sw.add_argument("--seed", type=int, help="override the config's base seed")

    probe = commands.add_parser("probe", help="write monotonicity reports for a scheme")
    probe.add_argument("config", help="path to a JSON config file")
    probe.add_argument("--out", help="output directory")

    analytic = commands.add_parser("analytic", help="print the Riccati coefficient")
    analytic.add_argument("--alpha", type=float, required=True, help="drift A")
    analytic.add_argument("--beta", type=float, required=True, help="discount rate")
    analytic.add_argument("--state-cost", type=float, default=1.0, help="Q")
    analytic.add_argument("--control-cost", type=float, default=1.0, help="R")
    analytic.add_argument("--control-gain", type=float, default=1.0, help="B")

    return parser


def _load(path: str, seed: int | None) -> ExperimentConfig:
    config = load_config(path)
    if seed is not None:
        config = config.with_value("seed", seed)

    return config


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load(args.config, args.seed)
    out = resolve_output_root(args.out, config)

    if config.kind is ExperimentKind.SWEEP:
        param = config["sweep.param"]
        if param is None:
            raise ConfigError("sweep.param", "a sweep config needs a parameter")

        sweep(config, param, config["sweep.values"], out)
        return 0

    return run_experiment(config, out).status.exit_code


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _load(args.config, args.seed)
    out = resolve_output_root(args.out, config)
    rows = sweep(config, args.param, parse_values(args.values), out, jobs=args.jobs)

    for row in rows:
        print(",".join(row.cells()))

    return 0


def _cmd_probe(args: argparse.Namespace) -> int:
    config = load_config(args.config).with_value("kind", ExperimentKind.PROBE.value)
    out = resolve_output_root(args.out, config)
    record = run_experiment(config, out)

    m = record.metrics
    print(
        f"frozen-policy violations={m['frozen_violations']} "
        f"full-operator violations={m['full_violations']} "
        f"negative coefficients={m['coefficient_violations']}"
    )
    return 0


def _cmd_analytic(args: argparse.Namespace) -> int:
    problem = LqProblem(
        drift=args.alpha,
        discount_rate=args.beta,
        state_cost=args.state_cost,
        control_cost=args.control_cost,
        control_gain=args.control_gain,
    )
    sol = riccati_solve(problem)
    print(
        f"gamma={sol.gamma_coef!r} residual={riccati_residual(problem, sol)!r} "
        f"closed_loop_rate={closed_loop_rate(problem, sol)!r}"
    )
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    """
    Entry point of the ``lqlab`` command.

    :return: The process exit code.
    """

    args = _parser().parse_args(argv)
    configure_logging(args.verbose)

    try:
        match args.command:
            case "run":
                return _cmd_run(args)

            case "sweep":
                return _cmd_sweep(args)

            case "probe":
                return _cmd_probe(args)

            case "analytic":
                return _cmd_analytic(args)

            case _:  # pragma: no cover
                raise AssertionError(args.command)

    except ConfigError as e:
        print(f"lqlab: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    except Diverged as e:
        logger.exception("solver failure outside a run")
        print(f"lqlab: {e}", file=sys.stderr)
        return RunStatus.DIVERGED.exit_code

    except NotConverged as e:
        logger.exception("solver failure outside a run")
        print(f"lqlab: {e}", file=sys.stderr)
        return RunStatus.NOT_CONVERGED.exit_code

    except LqlabError as e:
        logger.exception("unexpected failure")
        print(f"lqlab: {e}", file=sys.stderr)
        return EXIT_CONFIG
