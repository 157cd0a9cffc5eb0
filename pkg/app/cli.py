"""Command line: simulate, precompute, filter, validate and dump."""
import argparse
import logging
import sys
from typing import List, Optional

from .core.config import settings
from .core.exceptions import EXIT_DATA, EXIT_OK, EXIT_USAGE, VolFilterError
from .db.table_store import load_table, save_table
from .io.config_file import RunSetup, dump_config, load_config, with_overrides
from .io.csv_files import (
    read_ground_truth,
    read_ticks,
    write_ground_truth,
    write_ticks,
    write_trajectory,
)
from .services.filter_engine import FilterService
from .services.oracle import pf_run
from .services.simulator import simulate
from .services.structure_tables import build_table
from .services.validation import validation_report

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="Run configuration file")
    common.add_argument("--seed", type=int, help="Override run.seed")
    common.add_argument("--threads", type=int, help="Override run.threads")
    common.add_argument("--rk4-step", type=float, help="Override filter.rk4_step")

    parser = _Parser(prog="volfilter", description="Filtering of a hidden volatility chain from tick data")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="Simulate ticks and the hidden chain")
    p.add_argument("--ticks", help="Tick CSV to write (default paths.ticks)")
    p.add_argument("--truth", help="Ground-truth CSV to write (default paths.truth)")
    p.add_argument("--horizon", type=float, help="Override simulate.horizon")

    p = sub.add_parser("precompute", parents=[common], help="Build the structure table")
    p.add_argument("--table", help="Table file to write (default paths.table)")
    p.add_argument("--progress", action="store_true", help="Show a progress bar")

    p = sub.add_parser("filter", parents=[common], help="Filter a tick file")
    p.add_argument("--table", help="Table file (default paths.table)")
    p.add_argument("--ticks", help="Tick CSV (default paths.ticks)")
    p.add_argument("--output", help="Trajectory CSV to write (default paths.output)")
    p.add_argument("--ticks-only", action="store_true", help="Only report posteriors at ticks")
    p.add_argument("--probe-every", type=float, help="Report the posterior every DT between ticks")

    p = sub.add_parser("validate", parents=[common], help="Compare the filter with the particle oracle")
    p.add_argument("--table", help="Table file (default paths.table)")
    p.add_argument("--ticks", help="Tick CSV (default paths.ticks)")
    p.add_argument("--truth", help="Ground-truth CSV (default paths.truth)")
    p.add_argument("--particles", type=int, help="Override oracle.particles")
    p.add_argument("--oracle-output", help="Write the oracle trajectory CSV here")

    p = sub.add_parser("dump", parents=[common], help="Print the canonical configuration")
    p.add_argument("--output", help="Write to this file instead of stdout")
    return parser


def _require(parser, value: Optional[str], what: str) -> str:
    if not value:
        parser.error(f"no {what} given on the command line or in the config")
    return value


def _setup(args) -> RunSetup:
    setup = load_config(args.config)
    if args.seed is not None or args.threads is not None or args.rk4_step is not None:
        setup = with_overrides(setup, seed=args.seed, threads=args.threads, rk4_step=args.rk4_step)
    return setup


def _simulate(parser, args, setup: RunSetup) -> int:
    paths = setup.config.paths
    ticks_path = _require(parser, args.ticks or paths.ticks, "tick file")
    truth_path = args.truth or paths.truth
    horizon = args.horizon or setup.config.simulate.horizon
    result = simulate(setup.chain, setup.model, setup.policy, horizon, setup.seed)
    write_ticks(ticks_path, result.ticks)
    if truth_path:
        write_ground_truth(truth_path, result.ticks, result.true_states_at_ticks, setup.chain, result.path)
    print(f"ticks={len(result.ticks)} jumps={len(result.path.jump_times)}")
    return EXIT_OK


def _precompute(parser, args, setup: RunSetup) -> int:
    table_path = _require(parser, args.table or setup.config.paths.table, "table file")
    table = build_table(setup.chain, setup.model, setup.policy, setup.grid, threads=setup.threads, progress=args.progress)
    save_table(table, table_path)
    return EXIT_OK


def _filter_service(parser, args, setup: RunSetup) -> FilterService:
    table_path = _require(parser, args.table or setup.config.paths.table, "table file")
    table = load_table(table_path, setup.chain, setup.model, setup.policy)
    return FilterService(
        setup.chain,
        setup.model,
        setup.policy,
        table,
        rk4_step=setup.config.filter.rk4_step,
        fallback=setup.config.filter.fallback,
    )


def _filter(parser, args, setup: RunSetup) -> int:
    paths = setup.config.paths
    service = _filter_service(parser, args, setup)
    ticks_path = _require(parser, args.ticks or paths.ticks, "tick file")
    output_path = _require(parser, args.output or paths.output, "output file")
    ticks, _ = read_ticks(ticks_path)
    probe_every = args.probe_every or setup.config.filter.probe_every
    ticks_only = args.ticks_only or setup.config.filter.ticks_only
    trajectory = service.filter_ticks(ticks, probe_every=probe_every, ticks_only=ticks_only)
    write_trajectory(output_path, trajectory, setup.chain.size)
    return EXIT_OK


def _validate(parser, args, setup: RunSetup) -> int:
    paths = setup.config.paths
    service = _filter_service(parser, args, setup)
    ticks, _ = read_ticks(_require(parser, args.ticks or paths.ticks, "tick file"))
    filtered = service.filter_ticks(ticks, ticks_only=True)
    particles = args.particles or setup.config.oracle.particles
    reference = pf_run(
        setup.chain,
        setup.model,
        setup.policy,
        ticks,
        particles,
        setup.seed,
        threads=setup.threads,
        ess_fraction=setup.config.oracle.ess_fraction,
    )
    if args.oracle_output:
        write_trajectory(args.oracle_output, reference, setup.chain.size)

    truth_path = args.truth or paths.truth
    true_states = None
    if truth_path:
        try:
            true_states = read_ground_truth(truth_path)
        except VolFilterError as e:
            logger.warning(f"Ignoring ground truth: {e}")
    report = validation_report(filtered, reference, chain=setup.chain, true_states=true_states)
    print(f"points={report.count}")
    print(f"mean_tv={report.mean_tv:.6g}")
    print(f"max_tv={report.max_tv:.6g}")
    if report.tracking_power is not None:
        print(f"tracking_power={report.tracking_power:.6g}")
        print(f"mean_volatility_error={report.mean_volatility_error:.6g}")
    return EXIT_OK


def _dump(parser, args, setup: RunSetup) -> int:
    text = dump_config(setup.config)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": _simulate,
    "precompute": _precompute,
    "filter": _filter,
    "validate": _validate,
    "dump": _dump,
}


def cli(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand and return its exit code.

    0 on success, 1 on usage errors, 2 on data errors and 3 on numeric
    degeneracy the filter could not absorb.
    """
    logging.basicConfig(level=settings.LOG_LEVEL, format=settings.LOG_FORMAT)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a subcommand is required")
        setup = _setup(args)
        return COMMANDS[args.command](parser, args, setup)
    except UsageError as e:
        print(f"{parser.prog}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except VolFilterError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_DATA


def main() -> None:
    sys.exit(cli())
