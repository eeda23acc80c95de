"""
eval: run the task suite, or the 15-action probe with --probe15.
"""

import argparse
import asyncio
import logging
import os
from pathlib import Path

from app.commands.common import (add_common_arguments, build_predictor,
                                 resolve_seed)
from app.commands.probe import run_probe
from app.config import Settings
from app.experiments import TASK_NAMES, Method, format_table, task_suite

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser('eval', help="Evaluate planners on the task suite",
                                   description="Run closed-loop trials and write per-cell and aggregate CSVs.")
    add_common_arguments(parser)
    parser.add_argument('--model', default=None, help="Model file for the grain method")
    parser.add_argument('--ablation-model', default=None, help="Model file for the vector_ablation method")
    parser.add_argument('--task', action='append', choices=TASK_NAMES, default=None,
                        help="Task to run; repeat for several (default: all)")
    parser.add_argument('--method', action='append', choices=[m.value for m in Method], default=None,
                        help="Method to run; repeat for several (default: grain, baseline, vector_ablation)")
    parser.add_argument('--trials', type=int, default=None, help="Trials per (task, method) cell")
    parser.add_argument('--out', default=None, help="Results directory (default: <output_dir>)")
    parser.add_argument('--snapshots', default=None, help="Directory for per-step PGM snapshots")
    parser.add_argument('--probe15', action='store_true',
                        help="Run the 15-action probe with --model instead of the suite")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, settings: Settings) -> int:
    if args.probe15:
        method = Method(args.method[0]) if args.method else Method.GRAIN
        csv_path = os.path.join(args.out, f'probe_{method.value}.csv') if args.out else None
        return run_probe(settings, method, args.model, args.ablation_model, csv_path)

    seed = resolve_seed(args, settings)
    methods = [Method(m) for m in (args.method or ['grain', 'baseline', 'vector_ablation'])]
    predictors = {}
    for method in methods:
        predictor = build_predictor(method, settings, args.model, args.ablation_model)
        if predictor is not None:
            predictors[method.value] = predictor

    out_dir = args.out or settings.output_dir
    if args.snapshots:
        Path(args.snapshots).mkdir(parents=True, exist_ok=True)
    suite = asyncio.run(task_suite(
        seed, predictors, tasks=args.task, methods=methods, trials_per_cell=args.trials,
        settings=settings, output_dir=out_dir, snapshot_dir=args.snapshots,
    ))
    print(format_table(suite.rows))
    print(f"Aggregate written to {suite.aggregate_csv or os.path.join(out_dir, 'aggregate.csv')}")
    return 0
