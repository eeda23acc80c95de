"""
Experiment harness: dataset collection, closed-loop trials, the task suite
and its result tables.

Every run is a pure function of (settings, seed). Trials inside the suite run
concurrently on worker threads but are reduced in (task, method, seed) order,
so tables and CSVs are reproducible bit for bit.
"""

import asyncio
import csv
import logging
import os
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import Settings, format_duration, get_settings
from app.planner import (BaselinePolicy, DynamicsPredictor, Observation,
                         OracleDynamics, TerminationStatus, check_termination,
                         greedy_multi, restrict_actions)
from app.utils.granular_sim import (ExcavationAction, Obstacle, ObstacleShape,
                                    action_grid, new_slope,
                                    sequential_excavation_flux, step)
from app.utils.imaging import (burn_markers, delta_depth, export_pgm,
                               render_depth)
from app.utils.io_formats import TransitionRecord

logger = logging.getLogger(__name__)

NOT_AVAILABLE = "N/A"
OBSTACLE_GAP = 0.5  # cm between sampled obstacles


class SeedError(RuntimeError):
    """Raised when random placement keeps failing for a seed."""
    pass


class TrialGroup(str, Enum):
    """Data collection protocol groups."""
    SAME_ACTION = "same_action"
    SAME_OBSTACLE = "same_obstacle"
    VARY_BOTH = "vary_both"


class Method(str, Enum):
    GRAIN = "grain"
    BASELINE = "baseline"
    VECTOR_ABLATION = "vector_ablation"
    ORACLE = "oracle"


LEARNED_METHODS = (Method.GRAIN, Method.VECTOR_ABLATION)
DEFAULT_METHODS = (Method.GRAIN, Method.BASELINE, Method.VECTOR_ABLATION)
TASK_NAMES = ("single_single", "single_sequential", "multi_obstacle", "unseen_obstacle", "two_leg", "multi_unseen")


def eval_mae(pairs: Sequence[Tuple[Sequence[float], Sequence[float]]]) -> float:
    """
    Mean Euclidean distance over (a, b) position pairs, in cm.

    Raises:
        ValueError: no pairs.
    """
    if len(pairs) == 0:
        raise ValueError("eval_mae needs at least one pair")
    a = np.array([p[0] for p in pairs], dtype=np.float64).reshape(-1, 2)
    b = np.array([p[1] for p in pairs], dtype=np.float64).reshape(-1, 2)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


# Placement

def _draw_position(rng: np.random.Generator, settings: Settings, radius: float) -> Optional[np.ndarray]:
    """Uniform in the lower two-thirds, one footprint clear of every wall."""
    sim = settings.simulator
    clearance = 3.0 * radius
    x_lo, x_hi = clearance, sim.width - clearance
    y_lo, y_hi = sim.length / 3.0, sim.length - clearance
    if x_lo > x_hi or y_lo > y_hi:
        return None
    return np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)])


def place_obstacle(rng: np.random.Generator, settings: Settings) -> Tuple[float, float]:
    """
    Random obstacle position for data collection.

    Raises:
        SeedError: no valid position after placement_attempts draws.
    """
    radius = settings.dataset.obstacle_radius
    for _ in range(settings.dataset.placement_attempts):
        pos = _draw_position(rng, settings, radius)
        if pos is not None:
            return float(pos[0]), float(pos[1])
    raise SeedError(f"could not place an obstacle of radius {radius} cm on the trackway")


def trial_group(trial_id: int, settings: Optional[Settings] = None) -> TrialGroup:
    """Protocol group of a trial; groups occupy consecutive trial ids."""
    cfg = (settings or get_settings()).dataset
    if not 0 <= trial_id < cfg.trial_count:
        raise ValueError(f"trial id {trial_id} outside [0, {cfg.trial_count})")
    if trial_id < cfg.trials_same_action:
        return TrialGroup.SAME_ACTION
    if trial_id < cfg.trials_same_action + cfg.trials_same_obstacle:
        return TrialGroup.SAME_OBSTACLE
    return TrialGroup.VARY_BOTH


# Dataset

def gen_dataset(seed: int, settings: Optional[Settings] = None) -> List[TransitionRecord]:
    """
    Collect transitions from fresh slopes, one reference obstacle per trial.

    Trials in the same-action group all excavate at one shared location;
    trials in the same-obstacle group all start from one shared obstacle
    position; the rest vary both.

    Raises:
        SeedError: obstacle placement failed.
    """
    settings = settings or get_settings()
    sim, data = settings.simulator, settings.dataset
    actions = action_grid(sim)
    rng = np.random.default_rng(seed)
    shared_action = actions[int(rng.integers(len(actions)))]
    shared_position = place_obstacle(rng, settings)

    started = time.time()
    records: List[TransitionRecord] = []
    for trial in range(data.trial_count):
        group = trial_group(trial, settings)
        pos = shared_position if group == TrialGroup.SAME_OBSTACLE else place_obstacle(rng, settings)
        state = new_slope(sim)
        obstacles = [Obstacle(id=0, pos=pos, radius=data.obstacle_radius)]
        x_prev = None
        for t in range(data.excavations_per_trial):
            action = shared_action if group == TrialGroup.SAME_ACTION else actions[int(rng.integers(len(actions)))]
            x = render_depth(state, obstacles, settings.imaging)
            dx = delta_depth(x, x_prev, t)
            state, moved, _ = step(state, obstacles, action, sim)
            records.append(TransitionRecord(
                trial=trial, step=t, action_index=action.index, action_center=action.center,
                s_t=obstacles[0].pos, s_next=moved[0].pos, x=x, dx=dx,
            ))
            x_prev = x
            obstacles = moved
        logger.debug(f"Trial {trial} ({group.value}) done; obstacle ended at {obstacles[0].pos}")

    logger.info(f"Generated {len(records)} transitions from {data.trial_count} trials "
                f"in {format_duration(time.time() - started)}")
    return records


def dataset_composition(records: Sequence[TransitionRecord], settings: Optional[Settings] = None) -> Dict[str, int]:
    """Trial counts per protocol group plus the record and zero-delta counts."""
    settings = settings or get_settings()
    trials = sorted({r.trial for r in records})
    counts = {g.value: 0 for g in TrialGroup}
    for trial in trials:
        counts[trial_group(trial, settings).value] += 1
    counts['records'] = len(records)
    counts['zero_delta'] = sum(1 for r in records if not np.any(r.dx))
    return counts


# Tasks

@dataclass(frozen=True)
class ObstacleSpec:
    shape: ObstacleShape = ObstacleShape.HEMISPHERE
    mass_ratio: float = 1.0
    shape_coupling: float = 1.0


@dataclass(frozen=True)
class TaskSpec:
    """A task family: which obstacles, whether targets are sequential, which actions."""
    name: str
    description: str
    obstacles: Tuple[ObstacleSpec, ...]
    sequential: bool = False
    restricted_legs: bool = False


@dataclass
class TaskInstance:
    obstacles: List[Obstacle]
    targets: np.ndarray  # (K, 2)
    second_targets: Optional[np.ndarray] = None


def task_catalogue(settings: Optional[Settings] = None) -> Dict[str, TaskSpec]:
    """The six task families, keyed by name, in table order."""
    exp = (settings or get_settings()).experiment
    reference = ObstacleSpec()
    tasks = [
        TaskSpec("single_single", "one obstacle, one target", (reference,)),
        TaskSpec("single_sequential", "one obstacle, two targets in sequence", (reference,), sequential=True),
        TaskSpec("multi_obstacle", "four obstacles, four targets", (reference,) * 4),
        TaskSpec("unseen_obstacle", "star-shaped obstacle of twice the weight",
                 (ObstacleSpec(ObstacleShape.STAR, exp.unseen_mass_ratio, exp.star_coupling),)),
        TaskSpec("two_leg", "three obstacles, only the two leg locations", (reference,) * 3, restricted_legs=True),
        TaskSpec("multi_unseen", "star, light cuboid, heavy hemisphere and reference obstacle", (
            ObstacleSpec(ObstacleShape.STAR, 1.0, exp.star_coupling),
            ObstacleSpec(ObstacleShape.CUBOID, exp.cuboid_mass_ratio, exp.cuboid_coupling),
            ObstacleSpec(ObstacleShape.HEMISPHERE, exp.heavy_mass_ratio, 1.0),
            reference,
        )),
    ]
    return {task.name: task for task in tasks}


def get_task(name: str, settings: Optional[Settings] = None) -> TaskSpec:
    """Raises KeyError naming the known tasks."""
    catalogue = task_catalogue(settings)
    if name not in catalogue:
        raise KeyError(f"unknown task '{name}'; known tasks: {', '.join(catalogue)}")
    return catalogue[name]


def _reachable(pos: np.ndarray, actions: Sequence[ExcavationAction], radius: float) -> bool:
    """Some action lies upslope with its footprint columns touching the obstacle."""
    return any(a.center[1] < pos[1] and abs(a.center[0] - pos[0]) <= a.footprint_side / 2.0 + radius
               for a in actions)


def _draw_target(
    rng: np.random.Generator,
    origin: np.ndarray,
    settings: Settings,
    radius: float,
    actions: Sequence[ExcavationAction],
) -> Optional[np.ndarray]:
    exp, sim = settings.experiment, settings.simulator
    target = origin + np.array([
        rng.uniform(-exp.max_target_lateral, exp.max_target_lateral),
        rng.uniform(exp.min_target_travel, exp.max_target_travel),
    ])
    if not (radius <= target[0] <= sim.width - radius and radius <= target[1] <= sim.length - radius):
        return None
    if not any(target[1] - a.center[1] >= exp.target_action_clearance for a in actions):
        return None
    return target


def _separated(point: np.ndarray, others: Sequence[np.ndarray], min_distance: float) -> bool:
    return all(np.linalg.norm(point - o) > min_distance for o in others)


def sample_instance(
    spec: TaskSpec,
    rng: np.random.Generator,
    settings: Settings,
    actions: Sequence[ExcavationAction],
) -> TaskInstance:
    """
    Random solvable instance: every obstacle has an upslope action touching its
    columns and every target lies downslope of its obstacle.

    Raises:
        SeedError: no valid instance after placement_attempts draws.
    """
    radius = settings.dataset.obstacle_radius
    success = settings.planner.success_radius
    for _ in range(settings.dataset.placement_attempts):
        positions: List[np.ndarray] = []
        targets: List[np.ndarray] = []
        seconds: List[np.ndarray] = []
        for _k in spec.obstacles:
            pos = _draw_position(rng, settings, radius)
            if pos is None or not _reachable(pos, actions, radius):
                break
            if not _separated(pos, positions, 2.0 * radius + OBSTACLE_GAP):
                break
            target = _draw_target(rng, pos, settings, radius, actions)
            if target is None or not _separated(target, targets, 2.0 * success):
                break
            if spec.sequential:
                second = _draw_target(rng, target, settings, radius, actions)
                if second is None or not _separated(second, seconds, 2.0 * success):
                    break
                seconds.append(second)
            positions.append(pos)
            targets.append(target)
        else:
            obstacles = [
                Obstacle(id=k, pos=(float(p[0]), float(p[1])), radius=radius, mass_ratio=o.mass_ratio,
                         shape_coupling=o.shape_coupling, shape=o.shape)
                for k, (p, o) in enumerate(zip(positions, spec.obstacles))
            ]
            return TaskInstance(
                obstacles=obstacles,
                targets=np.array(targets),
                second_targets=np.array(seconds) if spec.sequential else None,
            )
    raise SeedError(f"could not sample a solvable '{spec.name}' instance")


# Trials

@dataclass
class StepRecord:
    step: int
    phase: int
    action_index: int
    realized: np.ndarray  # (K, 2) positions after the excavation
    predicted: Optional[np.ndarray] = None  # (K, 2)
    scores: Optional[np.ndarray] = None  # (K,)
    best_score: Optional[float] = None


@dataclass
class TrialResult:
    task: str
    method: str
    seed: int
    steps: List[StepRecord]
    final_distances: List[float]
    success: bool
    mae_prediction: Optional[float]  # learned and oracle methods only
    mae_final: float
    excavations: int
    termination: str
    targets: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


@dataclass
class TrialSummary:
    """The per-trial values tables are built from."""
    task: str
    method: str
    seed: int
    excavations: int
    termination: str
    success: bool
    mae_prediction: Optional[float]
    mae_final: float
    final_distances: List[float]

    @classmethod
    def from_result(cls, result: TrialResult) -> 'TrialSummary':
        return cls(
            task=result.task, method=result.method, seed=result.seed, excavations=result.excavations,
            termination=result.termination, success=result.success, mae_prediction=result.mae_prediction,
            mae_final=result.mae_final, final_distances=list(result.final_distances),
        )


def _positions(obstacles: Sequence[Obstacle]) -> np.ndarray:
    return np.array([o.pos for o in obstacles], dtype=np.float64).reshape(-1, 2)


def _resolve_predictor(method: Method, predictor: Optional[DynamicsPredictor], settings: Settings):
    if method == Method.BASELINE:
        return None
    if predictor is not None:
        return predictor
    if method == Method.ORACLE:
        return OracleDynamics(settings.simulator)
    raise ValueError(f"method '{method.value}' needs a trained model")


def run_trial(
    spec: TaskSpec,
    method: Method,
    seed: int,
    predictor: Optional[DynamicsPredictor] = None,
    settings: Optional[Settings] = None,
    instance: Optional[TaskInstance] = None,
    snapshot_dir: Optional[str] = None,
) -> TrialResult:
    """
    One closed-loop trial on the simulator.

    Observe, pick an action, excavate, repeat until every obstacle is within
    the success radius of its target, a termination rule fires, or the
    excavation cap is reached. Sequential tasks switch to the second targets
    once the first ones are reached.
    """
    settings = settings or get_settings()
    sim, plan_cfg = settings.simulator, settings.planner
    method = Method(method)
    rng = np.random.default_rng(seed)
    actions = action_grid(sim)
    if spec.restricted_legs:
        actions = restrict_actions(actions, settings.leg_positions)
    if instance is None:
        instance = sample_instance(spec, rng, settings, actions)
    predictor = _resolve_predictor(method, predictor, settings)
    baseline = BaselinePolicy(seed, plan_cfg.success_radius) if method == Method.BASELINE else None
    baseline_cfg = replace(plan_cfg, improvement_criterion="predicted")

    state = new_slope(sim)
    obstacles = list(instance.obstacles)
    targets = np.asarray(instance.targets, dtype=np.float64)
    phase = 0
    history = [_positions(obstacles)]
    best_scores: List[float] = []
    steps: List[StepRecord] = []
    pairs: List[Tuple[np.ndarray, np.ndarray]] = []
    x_prev: Optional[np.ndarray] = None
    prev_positions: Optional[List[Tuple[float, float]]] = None
    t = 0

    while True:
        positions = _positions(obstacles)
        if np.all(np.linalg.norm(targets - positions, axis=1) < plan_cfg.success_radius):
            if phase == 0 and instance.second_targets is not None:
                phase = 1
                targets = np.asarray(instance.second_targets, dtype=np.float64)
                history = [positions]
                best_scores = []
                if baseline:
                    baseline.reset()
                logger.debug(f"{spec.name}/{method.value} seed {seed}: first targets reached, switching")
                continue
            termination = "success"
            break
        if len(steps) >= plan_cfg.max_excavations:
            termination = "cap"
            break

        x = render_depth(state, obstacles, settings.imaging)
        dx = delta_depth(x, x_prev, t)
        plan = None
        if baseline:
            status = check_termination(history, [], baseline_cfg)
            if status != TerminationStatus.CONTINUE:
                termination = status.value
                break
            action = baseline.select(positions, targets, actions)
            if action is None:
                termination = "baseline_exhausted"
                break
        else:
            observation = Observation(depth=x, delta=dx, obstacles=obstacles, prev_positions=prev_positions,
                                      step=t, slope=state)
            plan = greedy_multi(predictor, observation, targets, actions, plan_cfg)
            best_scores.append(plan.best_score)
            status = check_termination(history, best_scores, plan_cfg, targets)
            if status != TerminationStatus.CONTINUE:
                termination = status.value
                break
            action = plan.action

        if snapshot_dir:
            path = os.path.join(snapshot_dir, f"{spec.name}_{method.value}_{seed}_step{t:02d}.pgm")
            export_pgm(x, path, overlay=lambda g, a=action, q=targets: burn_markers(g, sim.cell_size, a, q))

        state, moved, _ = step(state, obstacles, action, sim)
        realized = _positions(moved)
        if plan is not None:
            pairs.extend(zip(plan.predictions, realized))
        steps.append(StepRecord(
            step=t, phase=phase, action_index=action.index, realized=realized,
            predicted=None if plan is None else plan.predictions.copy(),
            scores=None if plan is None else plan.scores.copy(),
            best_score=None if plan is None else plan.best_score,
        ))
        history.append(realized)
        prev_positions = [o.pos for o in obstacles]
        x_prev = x
        obstacles = moved
        t += 1

    final = np.linalg.norm(targets - _positions(obstacles), axis=1)
    success = bool(np.all(final < plan_cfg.success_radius))
    mae_prediction = eval_mae(pairs) if pairs and method != Method.BASELINE else None
    logger.info(
        f"{spec.name}/{method.value} seed {seed}: {termination} after {len(steps)} excavation(s), "
        f"final distances {np.round(final, 2).tolist()} cm"
    )
    return TrialResult(
        task=spec.name, method=method.value, seed=seed, steps=steps,
        final_distances=[float(d) for d in final], success=success, mae_prediction=mae_prediction,
        mae_final=float(np.mean(final)), excavations=len(steps), termination=termination, targets=targets,
    )


# Probe

@dataclass
class ProbeRow:
    action_index: int
    center: Tuple[float, float]
    predicted: np.ndarray
    true: np.ndarray

    @property
    def error(self) -> float:
        return float(np.linalg.norm(self.predicted - self.true))


@dataclass
class ProbeResult:
    obstacle_pos: Tuple[float, float]
    rows: List[ProbeRow]

    @property
    def mae(self) -> float:
        return eval_mae([(r.predicted, r.true) for r in self.rows])


def probe_15_actions(
    predictor: DynamicsPredictor,
    settings: Optional[Settings] = None,
    obstacle_pos: Optional[Sequence[float]] = None,
) -> ProbeResult:
    """
    Every grid action applied once to the same undisturbed slope and obstacle,
    comparing the predicted and simulated obstacle positions.
    """
    settings = settings or get_settings()
    sim = settings.simulator
    if obstacle_pos is None:
        obstacle_pos = (sim.width / 2.0, 0.6 * sim.length)
    state = new_slope(sim)
    obstacle = Obstacle(id=0, pos=tuple(obstacle_pos), radius=settings.dataset.obstacle_radius)
    actions = action_grid(sim)
    x = render_depth(state, [obstacle], settings.imaging)
    observation = Observation(depth=x, delta=delta_depth(x, None, 0), obstacles=[obstacle], step=0, slope=state)
    predictions = np.asarray(predictor.predict(observation, actions), dtype=np.float64)[:, 0, :]

    rows = []
    for action, pred in zip(actions, predictions):
        _, moved, _ = step(state, [obstacle], action, sim)
        rows.append(ProbeRow(action_index=action.index, center=action.center, predicted=pred,
                             true=np.array(moved[0].pos)))
    result = ProbeResult(obstacle_pos=obstacle.pos, rows=rows)
    logger.info(f"Probe over {len(rows)} actions: MAE {result.mae:.3f} cm")
    return result


def write_probe_csv(result: ProbeResult, path: str) -> str:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['action_index', 'center_x', 'center_y', 'pred_x', 'pred_y', 'true_x', 'true_y', 'error_cm'])
        for r in result.rows:
            writer.writerow([r.action_index, repr(r.center[0]), repr(r.center[1]),
                             repr(float(r.predicted[0])), repr(float(r.predicted[1])),
                             repr(float(r.true[0])), repr(float(r.true[1])), repr(r.error)])
        writer.writerow(['mean', '', '', '', '', '', '', repr(result.mae)])
    return path


def sequential_flux_study(beds: int, seed: int, settings: Optional[Settings] = None) -> List[Tuple[float, float]]:
    """
    Downslope flux of two same-site excavations on freshly prepared beds.

    Each bed gets a random grid action with its center jittered by up to 1 cm.
    """
    settings = settings or get_settings()
    sim = settings.simulator
    actions = action_grid(sim)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(beds):
        base = actions[int(rng.integers(len(actions)))]
        jitter = rng.uniform(-1.0, 1.0, size=2)
        action = ExcavationAction(index=base.index, center=(base.center[0] + float(jitter[0]),
                                                            base.center[1] + float(jitter[1])),
                                  footprint_side=base.footprint_side)
        out.append(sequential_excavation_flux(new_slope(sim), action, sim))
    if out:
        grew = sum(1 for first, second in out if second >= first)
        logger.info(f"Second excavation moved at least as much material in {grew}/{len(out)} beds")
    return out


# Tables

@dataclass
class AggregateRow:
    task: str
    method: str
    trials: int
    mae_prediction_mean: Optional[float]
    mae_prediction_std: Optional[float]
    mae_final_mean: float
    mae_final_std: float
    success_rate: float
    mean_excavations: float


AGGREGATE_COLUMNS = ['task', 'method', 'trials', 'MAE_pred_mean_cm', 'MAE_pred_std_cm',
                     'MAE_final_mean_cm', 'MAE_final_std_cm', 'success_rate', 'mean_excavations']
TRIAL_COLUMNS = ['task', 'method', 'seed', 'excavations', 'termination', 'success',
                 'MAE_pred_cm', 'MAE_final_cm', 'final_distances_cm']


def aggregate(summaries: Sequence[TrialSummary]) -> List[AggregateRow]:
    """Mean and standard deviation per (task, method), in order of first appearance."""
    cells: Dict[Tuple[str, str], List[TrialSummary]] = {}
    for s in summaries:
        cells.setdefault((s.task, s.method), []).append(s)
    rows = []
    for (task, method), group in cells.items():
        predicted = [s.mae_prediction for s in group if s.mae_prediction is not None]
        final = np.array([s.mae_final for s in group])
        rows.append(AggregateRow(
            task=task,
            method=method,
            trials=len(group),
            mae_prediction_mean=float(np.mean(predicted)) if predicted else None,
            mae_prediction_std=float(np.std(predicted)) if predicted else None,
            mae_final_mean=float(np.mean(final)),
            mae_final_std=float(np.std(final)),
            success_rate=float(np.mean([1.0 if s.success else 0.0 for s in group])),
            mean_excavations=float(np.mean([s.excavations for s in group])),
        ))
    return rows


def _fmt(value: Optional[float]) -> str:
    return NOT_AVAILABLE if value is None else repr(float(value))


def _parse(value: str) -> Optional[float]:
    return None if value == NOT_AVAILABLE else float(value)


def write_trials_csv(summaries: Sequence[TrialSummary], path: str) -> str:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(TRIAL_COLUMNS)
        for s in summaries:
            writer.writerow([s.task, s.method, s.seed, s.excavations, s.termination, int(s.success),
                             _fmt(s.mae_prediction), _fmt(s.mae_final),
                             ';'.join(repr(d) for d in s.final_distances)])
    return path


def read_trials_csv(path: str) -> List[TrialSummary]:
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        return [
            TrialSummary(
                task=row['task'], method=row['method'], seed=int(row['seed']),
                excavations=int(row['excavations']), termination=row['termination'],
                success=row['success'] == '1', mae_prediction=_parse(row['MAE_pred_cm']),
                mae_final=float(row['MAE_final_cm']),
                final_distances=[float(v) for v in row['final_distances_cm'].split(';') if v],
            )
            for row in reader
        ]


def write_aggregate_csv(rows: Sequence[AggregateRow], path: str) -> str:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(AGGREGATE_COLUMNS)
        for r in rows:
            writer.writerow([r.task, r.method, r.trials, _fmt(r.mae_prediction_mean), _fmt(r.mae_prediction_std),
                             _fmt(r.mae_final_mean), _fmt(r.mae_final_std), _fmt(r.success_rate),
                             _fmt(r.mean_excavations)])
    return path


def aggregate_from_csv(paths: Sequence[str]) -> List[AggregateRow]:
    """Rebuild the aggregate table from per-cell trial CSVs."""
    summaries: List[TrialSummary] = []
    for path in paths:
        summaries.extend(read_trials_csv(path))
    return aggregate(summaries)


def write_plan_trace(result: TrialResult, path: str) -> str:
    """One row per excavation with predicted and realized positions, scores and the status."""
    k = len(result.final_distances)
    header = ['step', 'phase', 'action_index']
    for j in range(k):
        header += [f'pred_x_{j}', f'pred_y_{j}', f'true_x_{j}', f'true_y_{j}', f'score_{j}']
    header.append('status')
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for n, s in enumerate(result.steps):
            row = [s.step, s.phase, s.action_index]
            for j in range(k):
                pred = (NOT_AVAILABLE, NOT_AVAILABLE) if s.predicted is None else tuple(repr(float(v)) for v in s.predicted[j])
                score = NOT_AVAILABLE if s.scores is None else repr(float(s.scores[j]))
                row += [pred[0], pred[1], repr(float(s.realized[j][0])), repr(float(s.realized[j][1])), score]
            row.append(result.termination if n == len(result.steps) - 1 else TerminationStatus.CONTINUE.value)
            writer.writerow(row)
    return path


def format_table(rows: Sequence[AggregateRow]) -> str:
    """Plain-text table for logs and the console."""
    def cell(mean: Optional[float], std: Optional[float]) -> str:
        return NOT_AVAILABLE if mean is None else f"{mean:.2f} ± {std:.2f}"

    lines = [f"{'task':<20}{'method':<18}{'MAE pred (cm)':<18}{'MAE final (cm)':<18}{'success':<8}"]
    for r in rows:
        lines.append(f"{r.task:<20}{r.method:<18}{cell(r.mae_prediction_mean, r.mae_prediction_std):<18}"
                     f"{cell(r.mae_final_mean, r.mae_final_std):<18}{r.success_rate * 100:>6.0f}%")
    return "\n".join(lines)


# Suite

def trial_seed(seed: int, task_index: int, n: int) -> int:
    """Seed of the n-th trial of a task; every method of the task gets the same one."""
    return int(np.random.SeedSequence([seed, task_index, n]).generate_state(1)[0])


@dataclass
class SuiteResult:
    rows: List[AggregateRow]
    results: List[TrialResult]
    trial_csvs: List[str] = field(default_factory=list)
    aggregate_csv: Optional[str] = None


async def task_suite(
    seed: int,
    predictors: Optional[Dict[str, DynamicsPredictor]] = None,
    tasks: Optional[Sequence[str]] = None,
    methods: Sequence[Method] = DEFAULT_METHODS,
    trials_per_cell: Optional[int] = None,
    settings: Optional[Settings] = None,
    output_dir: Optional[str] = None,
    snapshot_dir: Optional[str] = None,
) -> SuiteResult:
    """
    Run every (task, method) cell with paired seeds and aggregate the results.

    At most experiment.workers trials run at once. When output_dir is given,
    one trial CSV per cell and aggregate.csv are written there; snapshot_dir
    receives per-step depth snapshots of every trial.
    """
    settings = settings or get_settings()
    predictors = predictors or {}
    catalogue = task_catalogue(settings)
    names = list(tasks) if tasks else list(catalogue)
    for name in names:
        if name not in catalogue:
            raise KeyError(f"unknown task '{name}'; known tasks: {', '.join(catalogue)}")
    methods = [Method(m) for m in methods]
    for method in methods:
        if method in LEARNED_METHODS and method.value not in predictors:
            raise ValueError(f"method '{method.value}' needs a trained model")
    n_trials = trials_per_cell or settings.experiment.trials_per_cell

    semaphore = asyncio.Semaphore(settings.experiment.workers)

    async def run_one(spec: TaskSpec, method: Method, s: int) -> TrialResult:
        async with semaphore:
            return await asyncio.to_thread(run_trial, spec, method, s, predictors.get(method.value), settings,
                                           None, snapshot_dir)

    order = list(catalogue)
    jobs = []
    for name in names:
        seeds = [trial_seed(seed, order.index(name), n) for n in range(n_trials)]
        for method in methods:
            for s in seeds:
                jobs.append(run_one(catalogue[name], method, s))

    started = time.time()
    logger.info(f"Running {len(jobs)} trials over {len(names)} task(s) x {len(methods)} method(s) "
                f"with {settings.experiment.workers} worker(s)")
    results = list(await asyncio.gather(*jobs))
    summaries = [TrialSummary.from_result(r) for r in results]
    rows = aggregate(summaries)
    suite = SuiteResult(rows=rows, results=results)

    if output_dir:
        Path(output_dir).mkdir(parents=True, exist_ok=True)
        for row in rows:
            cell = [s for s in summaries if s.task == row.task and s.method == row.method]
            suite.trial_csvs.append(write_trials_csv(cell, os.path.join(output_dir, f"{row.task}__{row.method}.csv")))
        suite.aggregate_csv = write_aggregate_csv(rows, os.path.join(output_dir, "aggregate.csv"))

    logger.info(f"Task suite finished in {format_duration(time.time() - started)}\n{format_table(rows)}")
    return suite
