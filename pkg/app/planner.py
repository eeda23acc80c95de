"""
Greedy excavation planning.

Every candidate action is scored by how far a one-step dynamics predictor
says it moves each obstacle along the unit vector toward that obstacle's
target. The planner picks the best total; ties go to the lowest action index.
A non-learning baseline, the termination rules and the two-leg action subset
live here too.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Protocol, Sequence, Set, Tuple

import numpy as np

from app.config import ConfigError, PlannerConfig, SimulatorConfig, get_settings
from app.utils.granular_sim import (ExcavationAction, Obstacle, SlopeState,
                                    step)

logger = logging.getLogger(__name__)

ACTION_MATCH_TOLERANCE = 1e-6  # cm


class DegenerateDirectionError(ValueError):
    """Raised when an obstacle sits exactly on its target."""
    pass


class NothingToDoError(RuntimeError):
    """Raised when every obstacle is already at its target."""
    pass


class TerminationStatus(str, Enum):
    CONTINUE = "continue"
    STOP_NO_IMPROVEMENT = "stop_no_improvement"
    STOP_STALLED = "stop_stalled"


@dataclass
class Observation:
    """What the planner sees before choosing an excavation."""
    depth: np.ndarray
    delta: np.ndarray
    obstacles: List[Obstacle]
    prev_positions: Optional[List[Tuple[float, float]]] = None
    step: int = 0
    slope: Optional[SlopeState] = None  # only the simulator-backed predictor reads this

    @property
    def positions(self) -> np.ndarray:
        return np.array([o.pos for o in self.obstacles], dtype=np.float64).reshape(-1, 2)


class DynamicsPredictor(Protocol):
    """Predicts every obstacle's next position for each candidate action."""
    name: str

    def predict(self, observation: Observation, actions: Sequence[ExcavationAction]) -> np.ndarray:
        """Returns an array of shape (n_actions, n_obstacles, 2) in cm."""
        ...


class OracleDynamics:
    """The simulator's own transition used as a perfect predictor."""

    name = "oracle"

    def __init__(self, config: Optional[SimulatorConfig] = None):
        self.config = config

    def predict(self, observation: Observation, actions: Sequence[ExcavationAction]) -> np.ndarray:
        if observation.slope is None:
            raise ValueError("OracleDynamics needs the slope state in the observation")
        out = np.zeros((len(actions), len(observation.obstacles), 2))
        for a, action in enumerate(actions):
            _, moved, _ = step(observation.slope, observation.obstacles, action, self.config)
            out[a] = [o.pos for o in moved]
        return out


@dataclass
class PlanStep:
    """One planning decision."""
    action: ExcavationAction
    predictions: np.ndarray  # (K, 2) predicted positions under the chosen action
    scores: np.ndarray  # (K,) per-obstacle scores of the chosen action
    action_totals: np.ndarray  # (n_actions,) summed score of every candidate
    best_score: float

    @property
    def action_index(self) -> int:
        return self.action.index


def unit_dir(s: Sequence[float], target: Sequence[float]) -> np.ndarray:
    """
    Unit vector from s toward target.

    Raises:
        DegenerateDirectionError: s equals target.
    """
    offset = np.asarray(target, dtype=np.float64) - np.asarray(s, dtype=np.float64)
    norm = float(np.hypot(offset[0], offset[1]))
    if norm == 0.0:
        raise DegenerateDirectionError(f"obstacle at {tuple(s)} is exactly on its target")
    return offset / norm


def _planner_config(config: Optional[PlannerConfig]) -> PlannerConfig:
    return config if config is not None else get_settings().planner


def _choose(totals: np.ndarray) -> int:
    # np.argmax returns the first maximum, so ties go to the lowest index
    return int(np.argmax(totals))


def greedy_single(
    model: DynamicsPredictor,
    observation: Observation,
    target: Sequence[float],
    actions: Sequence[ExcavationAction],
) -> PlanStep:
    """
    Pick the action whose predicted move has the largest projection on the
    direction toward the target.

    Raises:
        ValueError: empty action set or more than one obstacle.
        DegenerateDirectionError: obstacle exactly on its target.
    """
    if not actions:
        raise ValueError("greedy_single needs at least one candidate action")
    if len(observation.obstacles) != 1:
        raise ValueError(f"greedy_single handles one obstacle, got {len(observation.obstacles)}")
    s = observation.positions[0]
    e = unit_dir(s, target)
    predictions = np.asarray(model.predict(observation, actions), dtype=np.float64)
    totals = (predictions[:, 0, :] - s) @ e
    best = _choose(totals)
    logger.debug(f"Single-obstacle scores {np.round(totals, 4).tolist()} -> action {actions[best].index}")
    return PlanStep(
        action=actions[best],
        predictions=predictions[best],
        scores=totals[best:best + 1].copy(),
        action_totals=totals,
        best_score=float(totals[best]),
    )


def score_actions(
    predictions: np.ndarray,
    positions: np.ndarray,
    targets: np.ndarray,
    success_radius: float,
    penalize_leaving_targets: bool = False,
) -> np.ndarray:
    """
    Per-(action, obstacle) scores, shape (n_actions, K).

    Obstacles closer than success_radius to their target score 0, or with the
    penalty enabled, minus any predicted increase in their distance.
    """
    n_actions, k = predictions.shape[:2]
    scores = np.zeros((n_actions, k))
    for j in range(k):
        distance = float(np.linalg.norm(targets[j] - positions[j]))
        if distance < success_radius or distance == 0.0:
            if penalize_leaving_targets:
                predicted = np.linalg.norm(predictions[:, j, :] - targets[j], axis=1)
                scores[:, j] = -np.maximum(0.0, predicted - distance)
            continue
        e = unit_dir(positions[j], targets[j])
        scores[:, j] = (predictions[:, j, :] - positions[j]) @ e
    return scores


def greedy_multi(
    model: DynamicsPredictor,
    observation: Observation,
    targets: Sequence[Sequence[float]],
    actions: Sequence[ExcavationAction],
    config: Optional[PlannerConfig] = None,
) -> PlanStep:
    """
    Pick the action with the largest summed projected movement over all
    obstacles not yet at their targets.

    Raises:
        ValueError: empty action set or target count mismatch.
        NothingToDoError: every obstacle is within the success radius of its target.
    """
    cfg = _planner_config(config)
    if not actions:
        raise ValueError("greedy_multi needs at least one candidate action")
    positions = observation.positions
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if len(targets) != len(positions):
        raise ValueError(f"{len(positions)} obstacles but {len(targets)} targets")
    distances = np.linalg.norm(targets - positions, axis=1)
    if np.all((distances < cfg.success_radius) | (distances == 0.0)):
        raise NothingToDoError("all obstacles are at their targets")

    predictions = np.asarray(model.predict(observation, actions), dtype=np.float64)
    scores = score_actions(predictions, positions, targets, cfg.success_radius, cfg.penalize_leaving_targets)
    totals = scores.sum(axis=1)
    best = _choose(totals)
    logger.debug(f"Multi-obstacle totals {np.round(totals, 4).tolist()} -> action {actions[best].index}")
    return PlanStep(
        action=actions[best],
        predictions=predictions[best],
        scores=scores[best],
        action_totals=totals,
        best_score=float(totals[best]),
    )


class BaselinePolicy:
    """
    Non-learning policy: work one randomly chosen obstacle at a time and always
    excavate at the action location nearest its target.

    The current obstacle is dropped once an excavation moved it away from its
    target or it reached the target; a new one is drawn from the unvisited
    set. select() returns None when every obstacle has been visited.
    """

    def __init__(self, seed: int, success_radius: float = 2.5):
        self.rng = np.random.default_rng(seed)
        self.success_radius = success_radius
        self.reset()

    def reset(self) -> None:
        self.visited: Set[int] = set()
        self.current: Optional[int] = None
        self.last_distance: Optional[float] = None

    @staticmethod
    def nearest_action(target: Sequence[float], actions: Sequence[ExcavationAction]) -> ExcavationAction:
        centers = np.array([a.center for a in actions], dtype=np.float64)
        distances = np.linalg.norm(centers - np.asarray(target, dtype=np.float64), axis=1)
        return actions[int(np.argmin(distances))]

    def _pick(self, distances: np.ndarray) -> Optional[int]:
        while True:
            remaining = [k for k in range(len(distances)) if k not in self.visited]
            if not remaining:
                return None
            choice = int(remaining[self.rng.integers(len(remaining))])
            self.visited.add(choice)
            if distances[choice] >= self.success_radius:
                return choice

    def select(
        self,
        positions: np.ndarray,
        targets: np.ndarray,
        actions: Sequence[ExcavationAction],
    ) -> Optional[ExcavationAction]:
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
        distances = np.linalg.norm(targets - positions, axis=1)

        if self.current is not None:
            d = float(distances[self.current])
            reached = d < self.success_radius
            moved_away = self.last_distance is not None and d > self.last_distance
            if reached or moved_away:
                logger.debug(f"Baseline leaves obstacle {self.current} "
                             f"({'reached' if reached else 'moved away'}, {d:.2f} cm)")
                self.current = None
                self.last_distance = None

        if self.current is None:
            self.current = self._pick(distances)
            if self.current is None:
                return None

        self.last_distance = float(distances[self.current])
        return self.nearest_action(targets[self.current], actions)


def check_termination(
    history: Sequence[Sequence[Sequence[float]]],
    best_scores: Sequence[float],
    config: Optional[PlannerConfig] = None,
    targets: Optional[Sequence[Sequence[float]]] = None,
) -> TerminationStatus:
    """
    Decide whether a closed-loop trial should stop.

    Args:
        history: Obstacle positions (K, 2) after each excavation, initial positions first.
        best_scores: Best planner score at each planning step so far.
        config: Planner settings; improvement_criterion "measured" replaces the
            score test by "no obstacle got closer to its target in the last
            excavation" and needs targets.
        targets: Current targets (K, 2).

    Raises:
        ValueError: empty history, or measured mode without targets.
    """
    cfg = _planner_config(config)
    if len(history) == 0:
        raise ValueError("check_termination needs a nonempty history")
    positions = [np.asarray(h, dtype=np.float64).reshape(-1, 2) for h in history]

    if cfg.improvement_criterion == "measured":
        if targets is None:
            raise ValueError("measured improvement criterion needs targets")
        if len(positions) >= 2:
            goal = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
            before = np.linalg.norm(goal - positions[-2], axis=1)
            after = np.linalg.norm(goal - positions[-1], axis=1)
            if not np.any(after < before):
                return TerminationStatus.STOP_NO_IMPROVEMENT
    elif best_scores and best_scores[-1] <= 0.0:
        return TerminationStatus.STOP_NO_IMPROVEMENT

    window = cfg.stall_window
    if len(positions) - 1 >= window:
        recent = np.stack(positions[-(window + 1):])
        travelled = np.linalg.norm(np.diff(recent, axis=0), axis=2).sum(axis=0)
        if np.all(travelled <= cfg.stall_distance):
            return TerminationStatus.STOP_STALLED
    return TerminationStatus.CONTINUE


def restrict_actions(
    full: Sequence[ExcavationAction],
    leg_positions: Sequence[Sequence[float]],
) -> List[ExcavationAction]:
    """
    Subset of the action grid where the legs stand, in grid order.

    Raises:
        ConfigError: no leg positions, or a leg position off the grid.
    """
    if not leg_positions:
        raise ConfigError("leg_positions must name at least one action location")
    centers = np.array([a.center for a in full], dtype=np.float64)
    keep = set()
    for leg in leg_positions:
        gaps = np.abs(centers - np.asarray(leg, dtype=np.float64)).max(axis=1)
        matches = np.flatnonzero(gaps <= ACTION_MATCH_TOLERANCE)
        if len(matches) == 0:
            raise ConfigError(f"leg position {tuple(leg)} is not an action grid location")
        keep.add(int(matches[0]))
    return [a for k, a in enumerate(full) if k in keep]
