"""
Conformal Constraints Lab - Main Entry Point

Runs one experiment on the symmetry-reduced conformal constraint
equations and writes CSV results plus summary.txt.

Usage:
    python main.py <subcommand> --config <path>

Subcommands:
    lichnerowicz, coupled, k-sweep, two-solutions, tau-admissibility,
    halfcont-demo, geom-check
"""

import argparse
import asyncio
import logging
import sys
from typing import List, Optional

# Configure logging first
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
    datefmt="%H:%M:%S",
)
logger = logging.getLogger("conformal-lab")

# Import our modules
from config.run_config import MODES, RunConfig, load_config
from config.settings import get_settings
from services.errors import LabError
from services.experiments import ExperimentResult, run_experiment
from services.report_writer import ReportWriter


# =============================================================================
# Reports
# =============================================================================

async def write_reports(config: RunConfig, result: Optional[ExperimentResult], outcome: str) -> None:
    """Write every result table and summary.txt into the configured directory."""
    writer = ReportWriter(config.output.directory, csv_enabled=config.output.csv)
    await writer.start_run()
    if result is not None:
        for name, (headers, rows) in result.tables.items():
            await writer.start_table(name, headers)
            await writer.log_rows(name, rows)

    lines = [f"mode = {config.experiment.mode}", f"outcome = {outcome}"]
    if result is not None:
        lines += result.summary
    lines += ["", "# resolved configuration"] + config.echo()
    await writer.write_summary(lines)


# =============================================================================
# Run
# =============================================================================

def run(config: RunConfig) -> int:
    """
    Execute the configured experiment.

    Returns:
        0 on success, otherwise the exit code of the raised LabError
        (2 solver/search failures, 3 config errors, 4 numerical preconditions)
    """
    try:
        result = run_experiment(config)
    except LabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(e.user_message, file=sys.stderr)
        try:
            asyncio.run(write_reports(config, None, f"{e.code}: {e}"))
        except OSError as write_error:
            logger.error(f"Could not write summary: {write_error}")
        return e.exit_code

    asyncio.run(write_reports(config, result, "ok"))
    logger.info(f"{config.experiment.mode} finished")
    return 0


# =============================================================================
# Entry Point
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conformal-lab", description="Conformal constraint equations lab")
    subparsers = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sub = subparsers.add_parser(mode)
        sub.add_argument("--config", required=True, help="Path to a key=value run configuration")
        sub.add_argument("--output", default=None, help="Override [output] directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = build_parser().parse_args(argv)
    settings = get_settings()
    logging.getLogger().setLevel(settings.log_level.upper())

    try:
        config = load_config(args.config, mode=args.mode, settings=settings)
    except LabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(e.user_message, file=sys.stderr)
        return e.exit_code
    if args.output:
        config = config.model_copy(update={"output": config.output.model_copy(update={"directory": args.output})})
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
