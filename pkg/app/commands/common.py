"""
Shared pieces of the command-line subcommands.
"""

import argparse
import logging
import os
from pathlib import Path
from typing import Optional

from app.config import ConfigError, Settings
from app.dynamics_model import LearnedDynamics, ModelVariant, load_model
from app.experiments import Method
from app.planner import DynamicsPredictor, OracleDynamics

logger = logging.getLogger(__name__)


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', default=None,
                        help="YAML configuration file (default: $GRAIN_CONFIG or config/default.yaml)")
    parser.add_argument('--seed', type=int, default=None, help="Random seed (default: seed from the config)")
    parser.add_argument('--debug', action='store_true', help="Enable debug logging")


def resolve_seed(args: argparse.Namespace, settings: Settings) -> int:
    return args.seed if args.seed is not None else settings.seed


def output_path(settings: Settings, path: Optional[str], default_name: str) -> str:
    """Explicit path, or default_name inside the configured output directory."""
    if path:
        return path
    Path(settings.output_dir).mkdir(parents=True, exist_ok=True)
    return os.path.join(settings.output_dir, default_name)


def load_predictor(path: str, variant: ModelVariant, settings: Settings) -> LearnedDynamics:
    """
    Load a trained model and check it against the configured grid.

    Raises:
        ConfigError: wrong variant or a grid different from the simulator's.
    """
    params = load_model(path, settings.model.init_scale)
    if params.variant != variant:
        raise ConfigError(f"{path} holds a {params.variant.value} model, expected {variant.value}")
    sim = settings.simulator
    if (params.rows, params.cols) != (sim.rows, sim.cols) or params.cell_size != sim.cell_size:
        raise ConfigError(
            f"{path} was trained on a {params.rows}x{params.cols} grid at {params.cell_size} cm, "
            f"config has {sim.rows}x{sim.cols} at {sim.cell_size} cm"
        )
    logger.info(f"Loaded {variant.value} model from {path}")
    return LearnedDynamics(params, settings.imaging)


def build_predictor(
    method: Method,
    settings: Settings,
    model_path: Optional[str] = None,
    ablation_path: Optional[str] = None,
) -> Optional[DynamicsPredictor]:
    """
    Predictor for a planning method; None for the baseline.

    Raises:
        ConfigError: a learned method without its model file.
    """
    method = Method(method)
    if method == Method.BASELINE:
        return None
    if method == Method.ORACLE:
        return OracleDynamics(settings.simulator)
    if method == Method.GRAIN:
        if not model_path:
            raise ConfigError("method 'grain' needs --model")
        return load_predictor(model_path, ModelVariant.GRAIN, settings)
    if not ablation_path:
        raise ConfigError("method 'vector_ablation' needs --ablation-model")
    return load_predictor(ablation_path, ModelVariant.VECTOR_ABLATION, settings)
