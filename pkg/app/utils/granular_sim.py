"""
Heightfield simulator of an inclined granular bed.

The bed is a grid of material depths resting on a base plane tilted by the
incline angle. Coordinates on the slope plane are (x, y) in cm: x runs across
the slope (grid columns), y runs downslope (grid rows), with y = 0 at the top
edge. Avalanches are relaxed with a two-angle rule: a resting cell fails above
the maximum stability angle and, once flowing, keeps moving material until it
is back at the angle of repose.
"""

import logging
import math
import struct
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from app.config import ConfigError, SimulatorConfig, get_settings

logger = logging.getLogger(__name__)

MAX_INCLINE_DEG = 35.0

# Neighbor order for steepest-descent ties: down, left, right, up.
# Unit vectors are (x, y) on the slope plane.
_DIRECTIONS = np.array([[0.0, 1.0], [-1.0, 0.0], [1.0, 0.0], [0.0, -1.0]])

_SNAPSHOT_HEADER = struct.Struct('<qqdddd')


class InvalidActionError(ValueError):
    """Raised when an excavation footprint does not touch the grid."""
    pass


class DivergenceError(RuntimeError):
    """Raised when relaxation does not settle within the sweep cap."""
    pass


class ObstacleShape(str, Enum):
    """Obstacle geometry used for rendering."""
    HEMISPHERE = "hemisphere"
    STAR = "star"
    CUBOID = "cuboid"


@dataclass
class SlopeState:
    """The simulated granular slope."""
    heights: np.ndarray  # cm of material above the tank floor, shape (rows, cols)
    incline_deg: float
    cell_size: float
    repose_deg: float = 18.0
    max_stable_deg: float = 20.0
    active: Optional[np.ndarray] = None  # transient, cleared by relax
    disturbed: Optional[np.ndarray] = None  # cells that have flowed since the bed was prepared

    def __post_init__(self):
        self.heights = np.ascontiguousarray(self.heights, dtype=np.float64)
        if self.active is None:
            self.active = np.zeros(self.heights.shape, dtype=bool)
        if self.disturbed is None:
            self.disturbed = np.zeros(self.heights.shape, dtype=bool)

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.heights.shape

    @property
    def width(self) -> float:
        return self.cols * self.cell_size

    @property
    def length(self) -> float:
        return self.rows * self.cell_size

    @property
    def tan_incline(self) -> float:
        return math.tan(math.radians(self.incline_deg))

    def base_plane(self) -> np.ndarray:
        """Elevation of the tilted tank floor per row, zero at the bottom row."""
        return self.tan_incline * self.cell_size * np.arange(self.rows - 1, -1, -1, dtype=np.float64)

    def surface(self) -> np.ndarray:
        """Surface elevation H = h + base plane."""
        return self.heights + self.base_plane()[:, None]

    def copy(self) -> 'SlopeState':
        return replace(self, heights=self.heights.copy(), active=self.active.copy(),
                       disturbed=self.disturbed.copy())


@dataclass(frozen=True)
class Obstacle:
    """A rigid body riding the granular surface."""
    id: int
    pos: Tuple[float, float]  # (x, y) cm
    radius: float = 2.5
    mass_ratio: float = 1.0
    shape_coupling: float = 1.0
    shape: ObstacleShape = ObstacleShape.HEMISPHERE

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"Obstacle {self.id}: radius must be positive")
        if self.mass_ratio <= 0:
            raise ValueError(f"Obstacle {self.id}: mass_ratio must be positive")
        if not 0.0 < self.shape_coupling <= 2.0:
            raise ValueError(f"Obstacle {self.id}: shape_coupling must be within (0, 2]")
        object.__setattr__(self, 'pos', (float(self.pos[0]), float(self.pos[1])))

    @property
    def position(self) -> np.ndarray:
        return np.array(self.pos, dtype=np.float64)

    def moved_to(self, pos: Sequence[float]) -> 'Obstacle':
        return replace(self, pos=(float(pos[0]), float(pos[1])))


@dataclass
class FlowField:
    """Material flux per cell as (x, y) vectors in cm^3."""
    flux: np.ndarray  # shape (rows, cols, 2)

    @classmethod
    def zeros(cls, shape: Tuple[int, int]) -> 'FlowField':
        return cls(flux=np.zeros((shape[0], shape[1], 2), dtype=np.float64))

    def __add__(self, other: 'FlowField') -> 'FlowField':
        return FlowField(flux=self.flux + other.flux)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.flux[..., 0], self.flux[..., 1])

    def total_magnitude(self, rows: slice = slice(None), cols: slice = slice(None)) -> float:
        return float(self.magnitude()[rows, cols].sum())

    @property
    def is_zero(self) -> bool:
        return not np.any(self.flux)


@dataclass(frozen=True)
class ExcavationAction:
    """One leg excavation at a fixed location on the slope plane."""
    index: int
    center: Tuple[float, float]  # (x, y) cm
    footprint_side: float = 6.0

    @property
    def position(self) -> np.ndarray:
        return np.array(self.center, dtype=np.float64)


def _sim_config(config: Optional[SimulatorConfig]) -> SimulatorConfig:
    return config if config is not None else get_settings().simulator


def init_slope(
    incline_deg: float,
    rows: int,
    cols: int,
    cell_size: float,
    fill_depth: float,
    repose_deg: float = 18.0,
    max_stable_deg: float = 20.0,
) -> SlopeState:
    """
    Create a freshly smoothed bed of uniform depth.

    Raises:
        ConfigError: incline outside [0, 35] degrees, nonpositive dimensions,
            or an empty hysteresis band.
    """
    if not 0.0 <= incline_deg <= MAX_INCLINE_DEG:
        raise ConfigError(f"incline_deg must be within [0, {MAX_INCLINE_DEG}], got {incline_deg}")
    if rows <= 0 or cols <= 0 or cell_size <= 0:
        raise ConfigError(f"grid dimensions must be positive, got {rows}x{cols} at {cell_size} cm")
    if fill_depth <= 0:
        raise ConfigError(f"fill_depth must be positive, got {fill_depth}")
    if not repose_deg < max_stable_deg:
        raise ConfigError(f"repose_deg ({repose_deg}) must be below max_stable_deg ({max_stable_deg})")
    return SlopeState(
        heights=np.full((rows, cols), float(fill_depth)),
        incline_deg=float(incline_deg),
        cell_size=float(cell_size),
        repose_deg=float(repose_deg),
        max_stable_deg=float(max_stable_deg),
    )


def new_slope(config: Optional[SimulatorConfig] = None) -> SlopeState:
    """init_slope with every value taken from the simulator config."""
    cfg = _sim_config(config)
    return init_slope(cfg.incline_deg, cfg.rows, cfg.cols, cfg.cell_size, cfg.fill_depth,
                      cfg.repose_deg, cfg.max_stable_deg)


def total_volume(state: SlopeState) -> float:
    """Material volume in cm^3."""
    return float(state.heights.sum()) * state.cell_size ** 2


def _neighbor_drops(surface: np.ndarray) -> np.ndarray:
    """Height drop from every cell to each neighbor, -inf where the neighbor is outside."""
    drops = np.full((4,) + surface.shape, -np.inf)
    drops[0, :-1, :] = surface[:-1, :] - surface[1:, :]
    drops[1, :, 1:] = surface[:, 1:] - surface[:, :-1]
    drops[2, :, :-1] = surface[:, :-1] - surface[:, 1:]
    drops[3, 1:, :] = surface[1:, :] - surface[:-1, :]
    return drops


def effective_gradient(state: SlopeState, cell: Tuple[int, int]) -> np.ndarray:
    """
    Steepest-descent gradient of the surface at one cell.

    Returns:
        (x, y) vector whose norm is the largest one-sided drop to a 4-neighbor
        divided by the cell size, pointing toward that neighbor. Zero when no
        neighbor is lower.

    Raises:
        IndexError: cell outside the grid.
    """
    i, j = int(cell[0]), int(cell[1])
    if not (0 <= i < state.rows and 0 <= j < state.cols):
        raise IndexError(f"cell {cell} outside {state.rows}x{state.cols} grid")
    surface = state.surface()
    neighbors = ((i + 1, j), (i, j - 1), (i, j + 1), (i - 1, j))
    drops = np.full(4, -np.inf)
    for k, (ni, nj) in enumerate(neighbors):
        if 0 <= ni < state.rows and 0 <= nj < state.cols:
            drops[k] = surface[i, j] - surface[ni, nj]
    k = int(np.argmax(drops))
    if drops[k] <= 0:
        return np.zeros(2)
    return _DIRECTIONS[k] * (drops[k] / state.cell_size)


@njit(nogil=True, cache=True)
def _enqueue(cell, queue, queued, tail, count):
    if not queued[cell]:
        queued[cell] = True
        queue[tail] = cell
        return (tail + 1) % queue.shape[0], count + 1
    return tail, count


@njit(nogil=True, cache=True)
def _relax_kernel(heights, base, loose, flux, cell_size, tan_repose, tan_max, k_relax, slope_tol, max_sweeps):
    """
    Worklist relaxation, updated in place.

    A failing cell sends k_relax x (drop - cell_size x tan_repose) to its
    steepest-descent neighbor (ties: down, left, right, up), capped by the
    material it holds, and becomes loose. Loose cells fail above tan_repose,
    the rest above tan_max. Every cell whose drops a transfer changed is
    queued again. A sweep is one pass over the queue as it stood when the
    pass began.

    Returns:
        Sweeps used, or -1 when max_sweeps was reached.
    """
    rows, cols = heights.shape
    n = rows * cols
    queue = np.empty(n, np.int64)
    queued = np.ones(n, np.bool_)
    for c in range(n):
        queue[c] = c
    head = 0
    tail = 0
    count = n
    left_in_sweep = n
    sweeps = 1
    area = cell_size * cell_size

    while count > 0:
        if left_in_sweep == 0:
            if sweeps >= max_sweeps:
                return -1
            sweeps += 1
            left_in_sweep = count
        cell = queue[head]
        head = (head + 1) % n
        count -= 1
        left_in_sweep -= 1
        queued[cell] = False

        i = cell // cols
        j = cell % cols
        h = heights[i, j]
        if h <= 0.0:
            continue
        s = h + base[i]
        best = -np.inf
        k = -1
        if i + 1 < rows:
            d = s - heights[i + 1, j] - base[i + 1]
            if d > best:
                best, k = d, 0
        if j > 0:
            d = s - heights[i, j - 1] - base[i]
            if d > best:
                best, k = d, 1
        if j + 1 < cols:
            d = s - heights[i, j + 1] - base[i]
            if d > best:
                best, k = d, 2
        if i > 0:
            d = s - heights[i - 1, j] - base[i - 1]
            if d > best:
                best, k = d, 3
        limit = tan_repose if loose[i, j] else tan_max
        if k < 0 or best / cell_size <= limit + slope_tol:
            continue

        amount = k_relax * (best - cell_size * tan_repose)
        if amount > h:
            amount = h
        if k == 0:
            ni, nj, ux, uy = i + 1, j, 0.0, 1.0
        elif k == 1:
            ni, nj, ux, uy = i, j - 1, -1.0, 0.0
        elif k == 2:
            ni, nj, ux, uy = i, j + 1, 1.0, 0.0
        else:
            ni, nj, ux, uy = i - 1, j, 0.0, -1.0

        heights[i, j] -= amount
        heights[ni, nj] += amount
        # giver and receiver both record the transfer vector
        v = amount * area
        flux[i, j, 0] += ux * v
        flux[i, j, 1] += uy * v
        flux[ni, nj, 0] += ux * v
        flux[ni, nj, 1] += uy * v
        loose[i, j] = True

        for ci, cj in ((i, j), (ni, nj)):
            tail, count = _enqueue(ci * cols + cj, queue, queued, tail, count)
            if ci > 0:
                tail, count = _enqueue((ci - 1) * cols + cj, queue, queued, tail, count)
            if ci + 1 < rows:
                tail, count = _enqueue((ci + 1) * cols + cj, queue, queued, tail, count)
            if cj > 0:
                tail, count = _enqueue(ci * cols + cj - 1, queue, queued, tail, count)
            if cj + 1 < cols:
                tail, count = _enqueue(ci * cols + cj + 1, queue, queued, tail, count)
    return sweeps


def relax(state: SlopeState, config: Optional[SimulatorConfig] = None) -> Tuple[SlopeState, FlowField]:
    """
    Relax avalanches until every flowing cell is back at the angle of repose.

    Active and disturbed cells fail above the angle of repose, resting cells
    only above the maximum stability angle. Cells that flow join the disturbed
    set, which persists across calls until the bed is prepared again.

    Returns:
        The settled state (active set cleared) and the accumulated FlowField.

    Raises:
        DivergenceError: the sweep cap was reached.
    """
    cfg = _sim_config(config)
    out = state.copy()
    flow = FlowField.zeros(out.shape)
    loose = out.active | out.disturbed

    sweeps = _relax_kernel(
        out.heights, out.base_plane(), loose, flow.flux, out.cell_size,
        math.tan(math.radians(out.repose_deg)), math.tan(math.radians(out.max_stable_deg)),
        cfg.k_relax, cfg.slope_tol, cfg.max_sweeps,
    )
    if sweeps < 0:
        raise DivergenceError(f"relaxation did not settle after {cfg.max_sweeps} sweeps")

    out.disturbed = loose
    out.active = np.zeros(out.shape, dtype=bool)
    logger.debug(f"Relaxation settled after {sweeps} sweep(s)")
    return out, flow


def footprint_bounds(
    center: Sequence[float],
    side: float,
    cell_size: float,
    shape: Tuple[int, int],
) -> Tuple[int, int, int, int]:
    """
    Clipped square of cells covered by a footprint.

    The center maps to the nearest grid node; the square spans
    side / cell_size cells around it and is clipped with max(0, .) / min(n, .).

    Returns:
        (row_start, row_end, col_start, col_end), half-open; may be empty.
    """
    size = max(1, int(round(side / cell_size)))
    ci = int(math.floor(center[1] / cell_size + 0.5))
    cj = int(math.floor(center[0] / cell_size + 0.5))
    r0 = max(0, ci - size // 2)
    r1 = min(shape[0], ci + size - size // 2)
    c0 = max(0, cj - size // 2)
    c1 = min(shape[1], cj + size - size // 2)
    return r0, max(r0, r1), c0, max(c0, c1)


def disk_mask(pos: Sequence[float], radius: float, cell_size: float, shape: Tuple[int, int]) -> np.ndarray:
    """Cells whose centers lie within radius of pos."""
    ys = (np.arange(shape[0]) + 0.5) * cell_size
    xs = (np.arange(shape[1]) + 0.5) * cell_size
    dy = ys[:, None] - pos[1]
    dx = xs[None, :] - pos[0]
    return dx * dx + dy * dy <= radius * radius


def excavate(
    state: SlopeState,
    action: ExcavationAction,
    config: Optional[SimulatorConfig] = None,
) -> Tuple[SlopeState, FlowField]:
    """
    Scoop material out of the leg footprint and dump it just downslope.

    Removes up to excavation_depth from every footprint cell, spreads the
    removed volume evenly over the deposit band below the footprint, marks the
    touched cells active and relaxes.

    Raises:
        InvalidActionError: footprint entirely outside the grid.
    """
    cfg = _sim_config(config)
    r0, r1, c0, c1 = footprint_bounds(action.center, action.footprint_side, state.cell_size, state.shape)
    if r1 <= r0 or c1 <= c0:
        raise InvalidActionError(f"action {action.index} at {action.center} lies outside the trackway")

    out = state.copy()
    flow = FlowField.zeros(out.shape)
    area = out.cell_size ** 2

    removed = np.minimum(out.heights[r0:r1, c0:c1], cfg.excavation_depth)
    out.heights[r0:r1, c0:c1] -= removed
    flow.flux[r0:r1, c0:c1, 1] += removed * area

    b0, b1 = r1, min(out.rows, r1 + cfg.deposit_rows)
    if b1 <= b0:
        # footprint touches the bottom wall; dump onto its last rows instead
        b0, b1 = max(r0, r1 - cfg.deposit_rows), r1
    band_cells = (b1 - b0) * (c1 - c0)
    deposit = float(removed.sum()) / band_cells
    out.heights[b0:b1, c0:c1] += deposit
    flow.flux[b0:b1, c0:c1, 1] += deposit * area

    out.active[r0:r1, c0:c1] = True
    out.active[b0:b1, c0:c1] = True

    relaxed, avalanche = relax(out, cfg)
    logger.debug(
        f"Excavation {action.index} at {action.center}: moved {float(removed.sum()) * area:.2f} cm^3"
    )
    return relaxed, flow + avalanche


def _clamp_position(pos: np.ndarray, radius: float, width: float, length: float) -> np.ndarray:
    lo_x, hi_x = (radius, width - radius) if width > 2 * radius else (width / 2, width / 2)
    lo_y, hi_y = (radius, length - radius) if length > 2 * radius else (length / 2, length / 2)
    return np.array([min(max(pos[0], lo_x), hi_x), min(max(pos[1], lo_y), hi_y)])


def _resolve_overlaps(
    positions: List[np.ndarray],
    obstacles: List[Obstacle],
    width: float,
    length: float,
    max_passes: int = 20,
) -> None:
    order = sorted(range(len(obstacles)), key=lambda k: obstacles[k].id)
    for _ in range(max_passes):
        moved = False
        for a_pos, a in enumerate(order):
            for b in order[a_pos + 1:]:
                need = obstacles[a].radius + obstacles[b].radius
                offset = positions[b] - positions[a]
                dist = float(np.hypot(offset[0], offset[1]))
                if dist >= need - 1e-12:
                    continue
                unit = offset / dist if dist > 0 else np.array([0.0, 1.0])
                positions[b] = _clamp_position(positions[a] + unit * need, obstacles[b].radius, width, length)
                moved = True
        if not moved:
            return
    logger.debug("Obstacle overlap resolution hit its pass limit")


def obstacle_displacement(
    obstacle: Obstacle,
    flow: FlowField,
    cell_size: float,
    transport_gain: float,
) -> np.ndarray:
    """kappa_0 x coupling / mass x mean flux under the obstacle footprint."""
    shape = flow.flux.shape[:2]
    mask = disk_mask(obstacle.pos, obstacle.radius, cell_size, shape)
    if not mask.any():
        i = min(max(int(obstacle.pos[1] / cell_size), 0), shape[0] - 1)
        j = min(max(int(obstacle.pos[0] / cell_size), 0), shape[1] - 1)
        mask[i, j] = True
    mean_flux = flow.flux[mask].mean(axis=0)
    return transport_gain * obstacle.shape_coupling / obstacle.mass_ratio * mean_flux


def transport_obstacles(
    obstacles: List[Obstacle],
    flow: FlowField,
    state: SlopeState,
    config: Optional[SimulatorConfig] = None,
) -> List[Obstacle]:
    """
    Move obstacles with the material flowing under them.

    Positions are clamped so every footprint stays on the trackway, then
    overlaps are pushed apart along the line of centers in ascending id order.
    """
    cfg = _sim_config(config)
    positions = []
    for obstacle in obstacles:
        shift = obstacle_displacement(obstacle, flow, state.cell_size, cfg.transport_gain)
        positions.append(_clamp_position(obstacle.position + shift, obstacle.radius, state.width, state.length))
    _resolve_overlaps(positions, obstacles, state.width, state.length)
    return [obstacle.moved_to(pos) for obstacle, pos in zip(obstacles, positions)]


def step(
    state: SlopeState,
    obstacles: List[Obstacle],
    action: ExcavationAction,
    config: Optional[SimulatorConfig] = None,
) -> Tuple[SlopeState, List[Obstacle], FlowField]:
    """Ground-truth transition: excavate, then carry obstacles with the flow."""
    cfg = _sim_config(config)
    next_state, flow = excavate(state, action, cfg)
    moved = transport_obstacles(obstacles, flow, next_state, cfg)
    return next_state, moved, flow


def action_grid(config: Optional[SimulatorConfig] = None) -> List[ExcavationAction]:
    """
    The discrete excavation locations.

    action_cols across the slope by action_rows along it, evenly spaced over
    the upslope half with a half-footprint margin. Row 0 is nearest the top;
    index = row * action_cols + col.
    """
    cfg = _sim_config(config)
    half = cfg.footprint_side / 2.0
    xs = np.linspace(half, cfg.width - half, cfg.action_cols) if cfg.action_cols > 1 else np.array([cfg.width / 2])
    ys = (np.linspace(half, cfg.length / 2.0 - half, cfg.action_rows)
          if cfg.action_rows > 1 else np.array([cfg.length / 4]))
    actions = []
    for r, y in enumerate(ys):
        for c, x in enumerate(xs):
            actions.append(ExcavationAction(
                index=r * cfg.action_cols + c,
                center=(float(x), float(y)),
                footprint_side=cfg.footprint_side,
            ))
    return actions


def sequential_excavation_flux(
    state: SlopeState,
    action: ExcavationAction,
    config: Optional[SimulatorConfig] = None,
) -> Tuple[float, float]:
    """
    Flux magnitude below the deposit band for two excavations at one site.

    Returns:
        (first, second) total flux magnitude in the rows downslope of the
        footprint and its deposit band.
    """
    cfg = _sim_config(config)
    _, r1, _, _ = footprint_bounds(action.center, action.footprint_side, state.cell_size, state.shape)
    below = slice(min(state.rows, r1 + cfg.deposit_rows), state.rows)
    after_first, first = excavate(state, action, cfg)
    _, second = excavate(after_first, action, cfg)
    return first.total_magnitude(rows=below), second.total_magnitude(rows=below)


def save_snapshot(state: SlopeState, path: str) -> None:
    """Write the flat binary slope layout: header then row-major float64 heights."""
    header = _SNAPSHOT_HEADER.pack(
        state.rows, state.cols, state.cell_size, state.incline_deg, state.repose_deg, state.max_stable_deg,
    )
    with open(path, 'wb') as f:
        f.write(header)
        f.write(np.ascontiguousarray(state.heights, dtype='<f8').tobytes())


def load_snapshot(path: str) -> SlopeState:
    """Read a slope written by save_snapshot."""
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < _SNAPSHOT_HEADER.size:
        raise ValueError(f"{path}: truncated slope snapshot header")
    rows, cols, cell_size, incline, repose, max_stable = _SNAPSHOT_HEADER.unpack_from(raw)
    expected = _SNAPSHOT_HEADER.size + rows * cols * 8
    if rows <= 0 or cols <= 0 or len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for a {rows}x{cols} slope, got {len(raw)}")
    heights = np.frombuffer(raw, dtype='<f8', offset=_SNAPSHOT_HEADER.size).reshape(rows, cols).astype(np.float64)
    return SlopeState(heights=heights, incline_deg=incline, cell_size=cell_size,
                      repose_deg=repose, max_stable_deg=max_stable)
