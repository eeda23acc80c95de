"""
probe: apply every grid action once to the same undisturbed slope and compare
predicted with simulated obstacle positions.
"""

import argparse
import logging
from pathlib import Path
from typing import Optional

from app.commands.common import (add_common_arguments, build_predictor,
                                 output_path)
from app.config import Settings
from app.experiments import Method, probe_15_actions, write_probe_csv

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser('probe', help="Run the 15-action probe",
                                   description="Predict and simulate every grid action from one initial state.")
    add_common_arguments(parser)
    parser.add_argument('--model', default=None, help="Model file for the grain method")
    parser.add_argument('--ablation-model', default=None, help="Model file for the vector_ablation method")
    parser.add_argument('--method', choices=[m.value for m in Method if m != Method.BASELINE],
                        default=Method.GRAIN.value, help="Predictor to probe (default: grain)")
    parser.add_argument('--obstacle', type=float, nargs=2, metavar=('X', 'Y'), default=None,
                        help="Obstacle position in cm (default: trackway center, 60%% downslope)")
    parser.add_argument('--csv', default=None, help="Per-action CSV (default: <output_dir>/probe_<method>.csv)")
    parser.set_defaults(handler=run)
    return parser


def run_probe(
    settings: Settings,
    method: Method,
    model_path: Optional[str],
    ablation_path: Optional[str],
    csv_path: Optional[str],
    obstacle=None,
) -> int:
    predictor = build_predictor(method, settings, model_path, ablation_path)
    if predictor is None:
        raise ValueError("the probe needs a predicting method, not the baseline")
    result = probe_15_actions(predictor, settings, obstacle)
    if csv_path:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
    path = write_probe_csv(result, output_path(settings, csv_path, f'probe_{method.value}.csv'))
    print(f"Probe MAE: {result.mae:.3f} cm over {len(result.rows)} actions ({path})")
    return 0


def run(args: argparse.Namespace, settings: Settings) -> int:
    return run_probe(settings, Method(args.method), args.model, args.ablation_model, args.csv, args.obstacle)
