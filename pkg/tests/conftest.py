"""
Pytest configuration and fixtures for GRAIN testbed tests.

This module provides:
- Session-scoped fixtures for environment setup
- A small-grid Settings fixture so simulations stay fast
- Tiny model configurations for autograd and training tests
- Stub dynamics predictors for planner tests
- Temporary file fixtures
- Custom pytest markers
"""

import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Dict

import numpy as np
import pytest
import yaml
from dotenv import load_dotenv

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def pytest_configure(config):
    """Register custom markers."""
    config.addinivalue_line(
        "markers", "integration: marks integration tests (deselect with '-m \"not integration\"')"
    )
    config.addinivalue_line(
        "markers", "slow: marks tests that are slow to run"
    )


@pytest.fixture(scope="session", autouse=True)
def load_test_env():
    """Load environment variables from .env in repository root."""
    repo_root = Path(__file__).parent.parent
    env_path = repo_root / ".env"
    if env_path.exists():
        load_dotenv(env_path, override=True)


@pytest.fixture(autouse=True)
def clean_grain_env(monkeypatch):
    """Keep GRAIN_* overrides from a developer shell out of the tests."""
    for name in ("GRAIN_CONFIG", "GRAIN_SEED", "GRAIN_OUTPUT_DIR", "GRAIN_WORKERS", "GRAIN_DEBUG"):
        monkeypatch.delenv(name, raising=False)


# ============================================================================
# Settings Fixtures
# ============================================================================

def small_config_dict(output_dir: str = "results") -> Dict[str, Any]:
    """60 cm x 60 cm trackway on a 24 x 24 grid (2.5 cm cells)."""
    return {
        "seed": 7,
        "output_dir": output_dir,
        "simulator": {"rows": 24, "cols": 24, "cell_size": 2.5},
        "model": {"patch_size": 8, "embed_dim": 8, "depth": 1, "num_heads": 2,
                  "ff_dim": 16, "head_hidden": 8, "init_scale": 0.1},
        "training": {"epochs": 2, "batch_size": 4, "learning_rate": 1.0e-3},
        "planner": {"max_excavations": 6},
        "dataset": {"trials_same_action": 2, "trials_same_obstacle": 2, "trials_vary_both": 2,
                    "excavations_per_trial": 3},
        "experiment": {"trials_per_cell": 2, "workers": 2},
    }


@pytest.fixture
def small_settings(temp_dir):
    """Validated settings on the small grid, writing into a temp directory."""
    from app.config import Settings
    return Settings.from_dict(small_config_dict(os.path.join(temp_dir, "results")))


@pytest.fixture
def small_config_file(temp_dir) -> str:
    """The small settings written as YAML."""
    path = os.path.join(temp_dir, "small.yaml")
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(small_config_dict(os.path.join(temp_dir, "results")), f)
    return path


@pytest.fixture
def tiny_model_config():
    """One attention block on 4x4 patches of an 8x8 image."""
    from app.config import ModelConfig
    return ModelConfig(patch_size=4, embed_dim=8, depth=1, num_heads=2, ff_dim=12, head_hidden=6, init_scale=0.3)


@pytest.fixture
def tiny_records():
    """Synthetic 8x8 transitions over three trials (1 cm cells)."""
    from app.utils.io_formats import TransitionRecord

    rng = np.random.default_rng(3)
    records = []
    for trial in range(3):
        for step in range(4):
            x = 90.0 + rng.normal(0.0, 1.0, size=(8, 8))
            dx = np.zeros((8, 8)) if step == 0 else rng.normal(0.0, 0.1, size=(8, 8))
            s_t = (float(rng.uniform(2, 6)), float(rng.uniform(2, 6)))
            records.append(TransitionRecord(
                trial=trial, step=step, action_index=step, action_center=(2.0 + step, 2.0),
                s_t=s_t, s_next=(s_t[0], s_t[1] + 0.5), x=x, dx=dx,
            ))
    return records


# ============================================================================
# Stub Predictors
# ============================================================================

class ShiftPredictor:
    """Moves obstacle k by shifts[action_index][k]; everything else stays put."""

    name = "shift"

    def __init__(self, shifts: Dict[int, Any]):
        self.shifts = shifts
        self.calls = 0

    def predict(self, observation, actions):
        self.calls += 1
        positions = observation.positions
        out = np.repeat(positions[None], len(actions), axis=0).astype(np.float64)
        for a, action in enumerate(actions):
            if action.index in self.shifts:
                out[a] += np.asarray(self.shifts[action.index], dtype=np.float64).reshape(-1, 2)
        return out


@pytest.fixture
def shift_predictor():
    """Factory for ShiftPredictor stubs."""
    return ShiftPredictor


# ============================================================================
# Temporary File Fixtures
# ============================================================================

@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield tmpdir
