"""
train: fit the dynamics model on a dataset file.
"""

import argparse
import logging
from pathlib import Path

from app.commands.common import (add_common_arguments, output_path,
                                 resolve_seed)
from app.config import ConfigError, Settings
from app.dynamics_model import ModelVariant, save_model, train
from app.utils.io_formats import read_dataset

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser('train', help="Train the dynamics model",
                                   description="Train the dynamics model and write the model file plus a CSV log.")
    add_common_arguments(parser)
    parser.add_argument('--dataset', required=True, help="Dataset file written by gen-data")
    parser.add_argument('--out', default=None,
                        help="Model file (default: <output_dir>/model.bin or model_ablation.bin)")
    parser.add_argument('--log', default=None, help="Training log CSV (default: model path with .csv)")
    parser.add_argument('--ablation', action='store_true',
                        help="Train the vector ablation (action location fed to the head)")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, settings: Settings) -> int:
    seed = resolve_seed(args, settings)
    variant = ModelVariant.VECTOR_ABLATION if args.ablation else ModelVariant.GRAIN
    out = output_path(settings, args.out, 'model_ablation.bin' if args.ablation else 'model.bin')
    log_path = args.log or str(Path(out).with_suffix('.csv'))

    records, cell_size = read_dataset(args.dataset)
    sim = settings.simulator
    if records[0].x.shape != (sim.rows, sim.cols) or cell_size != sim.cell_size:
        raise ConfigError(
            f"{args.dataset} holds a {records[0].x.shape} grid at {cell_size} cm, "
            f"config has {sim.rows}x{sim.cols} at {sim.cell_size} cm"
        )
    params = train(records, seed, settings.model, settings.training, variant,
                   cell_size=cell_size, footprint_side=sim.footprint_side, log_path=log_path)
    save_model(params, out)
    best = min(h.val_mae_cm for h in params.history)
    print(f"Validation MAE: {best:.3f} cm (model {out}, log {log_path})")
    return 0
