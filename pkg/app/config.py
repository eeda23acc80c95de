"""
Configuration management for the GRAIN testbed.

Loads configuration from a YAML file (config/default.yaml unless GRAIN_CONFIG
points elsewhere) and applies a handful of environment overrides.
"""

import math
import os
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

GRAIN_TESTBED_VERSION = os.getenv("GRAIN_TESTBED_VERSION", "1.0.0")

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "default.yaml"


class ConfigError(Exception):
    """Raised when a configuration value is missing, unknown or out of range."""
    pass


def get_bool(value: str) -> bool:
    """Convert string to boolean."""
    return str(value).lower() in ('true', 'on', '1', 'yes')


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass
class SimulatorConfig:
    """Heightfield simulator parameters.

    Grid defaults give a 60 cm x 60 cm trackway at 0.5 cm per cell, so the
    6 cm leg spans 12 cells and a 2.5 cm obstacle radius spans 5.
    """
    rows: int = 120
    cols: int = 120
    cell_size: float = 0.5  # cm per cell
    fill_depth: float = 10.0  # cm of material above the tank floor
    incline_deg: float = 18.0
    repose_deg: float = 18.0  # dynamic angle: flowing cells stop below it
    max_stable_deg: float = 20.0  # static angle: resting cells fail above it
    excavation_depth: float = 2.0  # leg radius 3.0 cm minus 1.0 cm hub clearance
    deposit_rows: int = 2
    k_relax: float = 0.25
    slope_tol: float = 1e-7
    max_sweeps: int = 1_000_000
    transport_gain: float = 0.5  # kappa_0, 1/cm^2
    footprint_side: float = 6.0  # leg diameter (cm)
    action_cols: int = 5
    action_rows: int = 3

    @property
    def width(self) -> float:
        """Across-slope trackway extent in cm."""
        return self.cols * self.cell_size

    @property
    def length(self) -> float:
        """Downslope trackway extent in cm."""
        return self.rows * self.cell_size

    @property
    def tan_repose(self) -> float:
        return math.tan(math.radians(self.repose_deg))

    @property
    def tan_max_stable(self) -> float:
        return math.tan(math.radians(self.max_stable_deg))

    def validate(self) -> None:
        _require(0.0 <= self.incline_deg <= 35.0, f"incline_deg must be within [0, 35], got {self.incline_deg}")
        _require(self.rows > 0 and self.cols > 0, f"grid dimensions must be positive, got {self.rows}x{self.cols}")
        _require(self.cell_size > 0, "cell_size must be positive")
        _require(self.fill_depth > 0, "fill_depth must be positive")
        _require(0.0 < self.repose_deg < self.max_stable_deg < 90.0,
                 f"need 0 < repose_deg < max_stable_deg < 90, got {self.repose_deg}/{self.max_stable_deg}")
        _require(self.excavation_depth > 0, "excavation_depth must be positive")
        _require(self.deposit_rows >= 1, "deposit_rows must be at least 1")
        _require(0.0 < self.k_relax <= 0.5, f"k_relax must be within (0, 0.5], got {self.k_relax}")
        _require(self.slope_tol >= 0, "slope_tol must be non-negative")
        _require(self.max_sweeps > 0, "max_sweeps must be positive")
        _require(self.transport_gain >= 0, "transport_gain must be non-negative")
        _require(0 < self.footprint_side <= min(self.width, self.length), "footprint_side must fit the trackway")
        _require(self.action_cols >= 1 and self.action_rows >= 1, "action grid must be at least 1x1")


@dataclass
class ImagingConfig:
    """Depth camera and masking parameters."""
    camera_height: float = 100.0  # cm above the tank floor
    mask_window_factor: float = 3.0  # masking window side = factor x obstacle radius

    def validate(self) -> None:
        _require(self.camera_height > 0, "camera_height must be positive")
        _require(self.mask_window_factor > 0, "mask_window_factor must be positive")


@dataclass
class ModelConfig:
    """Patch-attention regressor architecture."""
    patch_size: int = 12
    embed_dim: int = 64
    depth: int = 2
    num_heads: int = 4
    ff_dim: int = 128
    head_hidden: int = 32
    init_scale: float = 0.02

    def validate(self, rows: Optional[int] = None, cols: Optional[int] = None) -> None:
        _require(self.patch_size > 0, "patch_size must be positive")
        _require(self.embed_dim > 0 and self.depth > 0, "embed_dim and depth must be positive")
        _require(self.num_heads > 0 and self.embed_dim % self.num_heads == 0,
                 f"embed_dim {self.embed_dim} must be divisible by num_heads {self.num_heads}")
        _require(self.ff_dim > 0 and self.head_hidden > 0, "ff_dim and head_hidden must be positive")
        if rows is not None and cols is not None:
            _require(rows % self.patch_size == 0 and cols % self.patch_size == 0,
                     f"patch_size {self.patch_size} must divide the {rows}x{cols} grid")


@dataclass
class TrainingConfig:
    """Optimizer and data split settings."""
    learning_rate: float = 3e-4
    batch_size: int = 16
    epochs: int = 100
    validation_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    flip_augmentation: bool = False

    def validate(self) -> None:
        _require(self.learning_rate > 0, "learning_rate must be positive")
        _require(self.batch_size > 0 and self.epochs > 0, "batch_size and epochs must be positive")
        _require(0.0 <= self.validation_fraction < 1.0, "validation_fraction must be within [0, 1)")
        _require(0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0, "Adam betas must be within [0, 1)")


@dataclass
class PlannerConfig:
    """Greedy planner and termination settings."""
    success_radius: float = 2.5  # cm, the obstacle radius
    stall_window: int = 3  # excavations
    stall_distance: float = 0.5  # cm accumulated over the window
    improvement_criterion: str = "predicted"  # or "measured"
    penalize_leaving_targets: bool = False
    max_excavations: int = 30

    def validate(self) -> None:
        _require(self.success_radius > 0, "success_radius must be positive")
        _require(self.stall_window >= 1, "stall_window must be at least 1")
        _require(self.stall_distance >= 0, "stall_distance must be non-negative")
        _require(self.improvement_criterion in ("predicted", "measured"),
                 f"improvement_criterion must be 'predicted' or 'measured', got {self.improvement_criterion!r}")
        _require(self.max_excavations > 0, "max_excavations must be positive")


@dataclass
class DatasetConfig:
    """Data collection protocol."""
    trials_same_action: int = 36
    trials_same_obstacle: int = 30
    trials_vary_both: int = 34
    excavations_per_trial: int = 10
    obstacle_radius: float = 2.5
    placement_attempts: int = 1000

    @property
    def trial_count(self) -> int:
        return self.trials_same_action + self.trials_same_obstacle + self.trials_vary_both

    def validate(self) -> None:
        _require(min(self.trials_same_action, self.trials_same_obstacle, self.trials_vary_both) >= 0,
                 "trial group sizes must be non-negative")
        _require(self.trial_count > 0, "dataset needs at least one trial")
        _require(0 < self.excavations_per_trial < 256, "excavations_per_trial must be within [1, 255]")
        _require(self.obstacle_radius > 0, "obstacle_radius must be positive")
        _require(self.placement_attempts > 0, "placement_attempts must be positive")


@dataclass
class ExperimentConfig:
    """Task suite settings."""
    trials_per_cell: int = 20
    workers: int = 4
    min_target_travel: float = 4.0  # cm downslope of the obstacle
    max_target_travel: float = 12.0
    max_target_lateral: float = 4.0  # cm across-slope from the obstacle
    target_action_clearance: float = 5.0  # cm downslope of some action location
    leg_positions: List[List[float]] = field(default_factory=lambda: [[16.5, 27.0], [43.5, 27.0]])
    star_coupling: float = 0.8
    cuboid_coupling: float = 0.9
    unseen_mass_ratio: float = 2.0
    cuboid_mass_ratio: float = 0.5
    heavy_mass_ratio: float = 4.0

    def validate(self) -> None:
        _require(self.trials_per_cell > 0, "trials_per_cell must be positive")
        _require(self.workers > 0, "workers must be positive")
        _require(self.min_target_travel >= 0 and self.max_target_lateral >= 0, "target offsets must be non-negative")
        _require(self.max_target_travel >= self.min_target_travel, "max_target_travel must be at least min_target_travel")
        _require(len(self.leg_positions) > 0, "leg_positions must not be empty")
        for pos in self.leg_positions:
            _require(len(pos) == 2, f"leg position must be [x, y], got {pos}")
        for name in ("star_coupling", "cuboid_coupling"):
            value = getattr(self, name)
            _require(0.0 < value <= 2.0, f"{name} must be within (0, 2], got {value}")
        for name in ("unseen_mass_ratio", "cuboid_mass_ratio", "heavy_mass_ratio"):
            _require(getattr(self, name) > 0, f"{name} must be positive")


_SECTIONS = {
    "simulator": SimulatorConfig,
    "imaging": ImagingConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "planner": PlannerConfig,
    "dataset": DatasetConfig,
    "experiment": ExperimentConfig,
}

_TOP_LEVEL = ("seed", "output_dir", "debug")


def _build_section(name: str, cls: type, values: Any) -> Any:
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"Section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in section '{name}': {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid section '{name}': {e}")


@dataclass
class Settings:
    """Application settings."""

    seed: int = 0
    output_dir: str = "results"
    debug: bool = False

    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    imaging: ImagingConfig = field(default_factory=ImagingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self) -> 'Settings':
        """Check every section against its preconditions. Returns self."""
        self.simulator.validate()
        self.imaging.validate()
        self.model.validate(self.simulator.rows, self.simulator.cols)
        self.training.validate()
        self.planner.validate()
        self.dataset.validate()
        self.experiment.validate()
        return self

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'Settings':
        """Build settings from a parsed mapping, rejecting unknown keys."""
        data = dict(data or {})
        unknown = sorted(set(data) - set(_SECTIONS) - set(_TOP_LEVEL))
        if unknown:
            raise ConfigError(f"Unknown configuration key(s): {', '.join(unknown)}")
        kwargs: Dict[str, Any] = {name: _build_section(name, sec, data.get(name)) for name, sec in _SECTIONS.items()}
        try:
            kwargs["seed"] = int(data.get("seed", 0))
        except (TypeError, ValueError):
            raise ConfigError(f"seed must be an integer, got {data.get('seed')!r}")
        kwargs["output_dir"] = str(data.get("output_dir", "results"))
        kwargs["debug"] = get_bool(data.get("debug", False))
        return cls(**kwargs).validate()

    @classmethod
    def from_file(cls, path: str) -> 'Settings':
        """Load settings from a YAML file."""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Cannot parse config {path}: {e}")
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"Config {path} must contain a mapping at the top level")
        return cls.from_dict(data)

    @classmethod
    def from_env(cls) -> 'Settings':
        """Load settings from GRAIN_CONFIG (or the default file) plus environment overrides."""
        path = os.getenv('GRAIN_CONFIG', '')
        if path:
            settings = cls.from_file(path)
        elif DEFAULT_CONFIG_PATH.exists():
            settings = cls.from_file(str(DEFAULT_CONFIG_PATH))
        else:
            settings = cls().validate()
        return settings.with_env_overrides()

    def with_env_overrides(self) -> 'Settings':
        """Apply GRAIN_* environment variables on top of file values."""
        if os.getenv('GRAIN_SEED'):
            try:
                self.seed = int(os.getenv('GRAIN_SEED', '0'))
            except ValueError:
                raise ConfigError(f"GRAIN_SEED must be an integer, got {os.getenv('GRAIN_SEED')!r}")
        if os.getenv('GRAIN_OUTPUT_DIR'):
            self.output_dir = os.getenv('GRAIN_OUTPUT_DIR', self.output_dir)
        if os.getenv('GRAIN_WORKERS'):
            try:
                self.experiment.workers = int(os.getenv('GRAIN_WORKERS', '1'))
            except ValueError:
                raise ConfigError(f"GRAIN_WORKERS must be an integer, got {os.getenv('GRAIN_WORKERS')!r}")
        if os.getenv('GRAIN_DEBUG'):
            self.debug = get_bool(os.getenv('GRAIN_DEBUG', 'false'))
        return self.validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def leg_positions(self) -> List[Tuple[float, float]]:
        return [(float(x), float(y)) for x, y in self.experiment.leg_positions]


@lru_cache()
def get_settings() -> Settings:
    """Get cached application settings."""
    return Settings.from_env()


def load_settings(path: Optional[str] = None) -> Settings:
    """Settings for an explicit config path, falling back to the cached defaults."""
    if path:
        return Settings.from_file(path).with_env_overrides()
    return get_settings()


def format_duration(seconds: float) -> str:
    """
    Format duration in seconds to human-readable string.

    Args:
        seconds: Duration in seconds.

    Returns:
        Formatted string like "3 minutes and 29 seconds" or "45 seconds".
    """
    minutes, secs = divmod(int(seconds), 60)
    if minutes > 0:
        return f"{minutes} minute{'s' if minutes != 1 else ''} and {secs} second{'s' if secs != 1 else ''}"
    return f"{secs} second{'s' if secs != 1 else ''}"
