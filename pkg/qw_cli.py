#!/usr/bin/env python3
"""
Percolated quantum walk command line interface.
Every subcommand runs one experiment and writes its table as CSV, to --out or stdout.
"""

import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional, Sequence

from qw_config import DEFAULT_SWEEP, ConfigManager
from qw_errors import EXIT_OK, ErrorRecovery, UsageError
from qw_harness import (
    Backend,
    ExperimentSpec,
    OracleKind,
    exp_channel_ring,
    exp_classical,
    exp_complete_graph,
    exp_convergence,
    exp_epsilon_horizon,
    exp_longtime_finite_tau,
    exp_monte_carlo,
    exp_oracle,
    exp_trajectory_lattice,
    run_sweep,
    sweep_output_path,
)
from qw_reports import Report, write_report

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

logger = logging.getLogger("qw_cli")


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors as exceptions instead of exiting with 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


COMMANDS = {
    "trajectory": ("Single quantum trajectory vs. the rescaled walk", Backend.TRAJECTORY),
    "channel": ("Exact enumerated channel vs. the rescaled walk", Backend.CHANNEL),
    "montecarlo": ("Trajectory-averaged channel with standard errors", Backend.MONTE_CARLO),
    "classical": ("Classical walk on the percolated graph", Backend.CLASSICAL),
    "oracle": ("Evaluate a closed-form reference curve", Backend.CHANNEL),
    "complete": ("Quantum and classical trajectories on a complete graph", Backend.TRAJECTORY),
    "envelope": ("Finite-tau long run with exponential envelope fit", Backend.CHANNEL),
    "convergence": ("Max error vs. step count at fixed total time", Backend.CHANNEL),
    "horizon": ("Epsilon-horizon scan over step counts", Backend.CHANNEL),
}


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--graph", type=str, help="Graph spec: ring:N, lattice2d:WxH[:periodic], complete:N, file:PATH")
    parser.add_argument("--lambda", dest="lam", type=float, help="Edge keep probability")
    parser.add_argument("--tau", type=float, help="Step size")
    parser.add_argument("--steps", type=int, help="Number of steps S")
    parser.add_argument("--time", type=float, help="Total time T")
    parser.add_argument("--start", type=int, help="Start node (0-indexed)")
    parser.add_argument("--seed", type=int, help="Seed (unsigned 64-bit)")
    parser.add_argument("--stride", type=int, help="Record every n-th step (the last step is always recorded)")
    parser.add_argument("--gamma", type=float, help="Hopping rate")
    parser.add_argument("--workers", type=int, help="Worker threads")
    parser.add_argument("--out", type=str, help="Output CSV path (stdout when omitted)")
    parser.add_argument("--format", type=str, choices=["csv"], help="Output format")
    parser.add_argument("--config", type=str, help="key=value config file; flags override it")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = CliParser(prog="qwperc", description="Quantum walks on dynamically percolated graphs")
    subparsers = parser.add_subparsers(dest="command", parser_class=CliParser, help="Command to execute")

    for name, (help_text, _) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        add_common_arguments(sub)
        if name in ("trajectory", "channel"):
            sub.add_argument("--sweep", nargs="?", const=",".join(f"{lam:g}" for lam in DEFAULT_SWEEP),
                             help="Comma-separated lambda values, one output file each")
        if name in ("montecarlo", "classical", "envelope"):
            sub.add_argument("--trajectories", type=int, help="Number of trajectories")
        if name == "classical":
            sub.add_argument("--average", action="store_true", default=None, help="Average over --trajectories runs")
        if name == "envelope":
            sub.add_argument("--trajectory-steps", type=int, help="Steps of the single quantum trajectory")
        if name == "oracle":
            sub.add_argument("--which", type=str, choices=[k.value for k in OracleKind], help="Reference curve")
        if name in ("convergence", "horizon"):
            sub.add_argument("--steps-list", type=str, help="Comma-separated step counts")
        if name == "horizon":
            sub.add_argument("--epsilons", type=str, help="Comma-separated relative error thresholds")

    args = parser.parse_args(argv)
    if not args.command:
        parser.print_usage(sys.stderr)
        raise UsageError("no command specified, use --help for usage information")
    return args


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    config = ConfigManager(args.config).load_config(args.command, overrides)
    config["backend"] = COMMANDS[args.command][1].value
    return ExperimentSpec.model_validate(config)


def emit(report: Report, path: Optional[str]) -> None:
    if path:
        write_report(report, path)
        print(f"{report.title} written to {path}")
    else:
        sys.stdout.write(report.render_csv())


def run_swept(spec: ExperimentSpec, experiment: Callable[[ExperimentSpec], Report]) -> None:
    results = run_sweep(spec, experiment)
    for lam, report in results:
        path = spec.output_path
        if path and len(results) > 1:
            path = sweep_output_path(path, lam)
        emit(report, path)


def run_envelope(spec: ExperimentSpec) -> None:
    report, fit = exp_longtime_finite_tau(spec)
    emit(report, spec.output_path)
    logger.info(f"Envelope: a={fit.a:.6g}, b={fit.b:.6g}, residual={fit.residual:.3g}, converged={fit.converged}")


HANDLERS: Dict[str, Callable[[ExperimentSpec], None]] = {
    "trajectory": lambda spec: run_swept(spec, exp_trajectory_lattice),
    "channel": lambda spec: run_swept(spec, exp_channel_ring),
    "montecarlo": lambda spec: emit(exp_monte_carlo(spec), spec.output_path),
    "classical": lambda spec: emit(exp_classical(spec), spec.output_path),
    "oracle": lambda spec: emit(exp_oracle(spec), spec.output_path),
    "complete": lambda spec: emit(exp_complete_graph(spec), spec.output_path),
    "envelope": run_envelope,
    "convergence": lambda spec: emit(exp_convergence(spec)[0], spec.output_path),
    "horizon": lambda spec: emit(exp_epsilon_horizon(spec), spec.output_path),
}


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(format=LOG_FORMAT)
    logging.getLogger().setLevel(logging.DEBUG if verbose else logging.INFO)


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns 0 on success, 1 usage, 2 numerical failure, 3 I/O."""
    recovery = ErrorRecovery()
    try:
        args = parse_arguments(argv)
        configure_logging(args.verbose)
        spec = build_spec(args)
        logger.debug(f"Resolved {args.command} spec: {spec.model_dump()}")
        HANDLERS[args.command](spec)
        return EXIT_OK
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except Exception as e:
        if isinstance(e, UsageError):
            print(str(e), file=sys.stderr)
        return recovery.handle(e)


def main():
    """Main entry point for the CLI."""
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
