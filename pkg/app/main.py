"""
GRAIN testbed - granular-slope simulator, learned dynamics and greedy planners.

This is the command-line entry point: python -m app.main <command> [options].
"""

import argparse
import logging
import sys
import time
from typing import List, Optional

from dotenv import load_dotenv

from app.commands import REGISTRARS
from app.commands.common import resolve_seed
from app.config import GRAIN_TESTBED_VERSION, ConfigError, format_duration, load_settings
from app.experiments import SeedError
from app.utils.autograd import NumericError
from app.utils.granular_sim import DivergenceError
from app.utils.io_formats import FormatError

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[
        logging.StreamHandler(sys.stdout),
    ]
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grain",
        description="Granular-slope testbed: data generation, model training and planning experiments.",
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {GRAIN_TESTBED_VERSION}")
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True
    for register in REGISTRARS:
        register(subparsers)
    return parser


def _log_startup(command: str, settings, seed: int) -> None:
    sim = settings.simulator
    logger.info("=" * 60)
    logger.info(f"GRAIN testbed {GRAIN_TESTBED_VERSION}: {command}")
    logger.info("=" * 60)
    logger.info(f"Grid: {sim.rows}x{sim.cols} cells at {sim.cell_size} cm")
    logger.info(f"Seed: {seed}")
    logger.info(f"Output dir: {settings.output_dir}")
    logger.info("=" * 60)


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and map failures to exit codes."""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    started = time.monotonic()
    try:
        settings = load_settings(args.config)
        if args.debug or settings.debug:
            logging.getLogger().setLevel(logging.DEBUG)
        _log_startup(args.command, settings, resolve_seed(args, settings))
        code = args.handler(args, settings)
    except (NumericError, DivergenceError) as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERIC
    except (ConfigError, FormatError, SeedError, KeyError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO

    logger.info(f"{args.command} finished in {format_duration(time.monotonic() - started)}")
    return code


if __name__ == "__main__":
    sys.exit(main())
