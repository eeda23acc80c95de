"""
plan: one closed-loop trial with a full trace dump.
"""

import argparse
import logging
from pathlib import Path

from app.commands.common import (add_common_arguments, build_predictor,
                                 output_path, resolve_seed)
from app.config import Settings
from app.experiments import (TASK_NAMES, Method, get_task, run_trial,
                             write_plan_trace)

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser('plan', help="Run one closed-loop trial",
                                   description="Plan and execute excavations for one task instance.")
    add_common_arguments(parser)
    parser.add_argument('--task', choices=TASK_NAMES, default='single_single', help="Task family")
    parser.add_argument('--method', choices=[m.value for m in Method], default=Method.GRAIN.value,
                        help="Planning method (default: grain)")
    parser.add_argument('--model', default=None, help="Model file for the grain method")
    parser.add_argument('--ablation-model', default=None, help="Model file for the vector_ablation method")
    parser.add_argument('--trace', default=None, help="Trace CSV (default: <output_dir>/trace_<task>_<method>.csv)")
    parser.add_argument('--snapshots', default=None, help="Directory for per-step PGM snapshots")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, settings: Settings) -> int:
    seed = resolve_seed(args, settings)
    method = Method(args.method)
    predictor = build_predictor(method, settings, args.model, args.ablation_model)
    if args.snapshots:
        Path(args.snapshots).mkdir(parents=True, exist_ok=True)
    result = run_trial(get_task(args.task, settings), method, seed, predictor, settings,
                       snapshot_dir=args.snapshots)
    trace = write_plan_trace(result, output_path(settings, args.trace, f'trace_{args.task}_{method.value}.csv'))
    mae = "N/A" if result.mae_prediction is None else f"{result.mae_prediction:.3f} cm"
    print(
        f"{'Success' if result.success else 'Failure'} ({result.termination}) after {result.excavations} "
        f"excavation(s); final MAE {result.mae_final:.3f} cm, prediction MAE {mae}; trace {trace}"
    )
    return 0
