"""
gen-data: collect the transition dataset on the simulator.
"""

import argparse
import logging

from app.commands.common import (add_common_arguments, output_path,
                                 resolve_seed)
from app.config import Settings
from app.experiments import dataset_composition, gen_dataset
from app.utils.io_formats import write_dataset

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser('gen-data', help="Generate the transition dataset",
                                   description="Run the data collection protocol and write a dataset file.")
    add_common_arguments(parser)
    parser.add_argument('--out', default=None, help="Dataset file (default: <output_dir>/dataset.bin)")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, settings: Settings) -> int:
    seed = resolve_seed(args, settings)
    out = output_path(settings, args.out, 'dataset.bin')
    records = gen_dataset(seed, settings)
    write_dataset(out, records, settings.simulator.cell_size)
    counts = dataset_composition(records, settings)
    print(
        f"Wrote {counts['records']} records to {out} "
        f"(same_action={counts['same_action']}, same_obstacle={counts['same_obstacle']}, "
        f"vary_both={counts['vary_both']} trials; {counts['zero_delta']} zero-delta records)"
    )
    return 0
