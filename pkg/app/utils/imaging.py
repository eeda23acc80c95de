"""
Image encodings of the slope for the dynamics model.

All images share the simulation grid: pixel (i, j) is cell (i, j), so rows run
downslope and columns across the slope. Depth values stay in cm; 8-bit
grayscale is produced only for inspection files.
"""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.config import ImagingConfig, get_settings
from app.utils.granular_sim import (ExcavationAction, InvalidActionError,
                                    Obstacle, ObstacleShape, SlopeState,
                                    disk_mask, footprint_bounds)

logger = logging.getLogger(__name__)

ACTION_ON = 255
STAR_POINTS = 5
STAR_INNER_RATIO = 0.5


class UnknownObstacleError(KeyError):
    """Raised when the selected obstacle id is not among the obstacles."""
    pass


def _imaging_config(config: Optional[ImagingConfig]) -> ImagingConfig:
    return config if config is not None else get_settings().imaging


def _star_mask(dx: np.ndarray, dy: np.ndarray, radius: float) -> np.ndarray:
    """Five-pointed star: boundary radius interpolates between tips and notches."""
    sector = 2.0 * math.pi / STAR_POINTS
    angle = np.mod(np.arctan2(dy, dx) + math.pi / 2.0, sector)
    t = np.abs(angle - sector / 2.0) / (sector / 2.0)  # 1 at a tip, 0 at a notch
    boundary = radius * (STAR_INNER_RATIO + (1.0 - STAR_INNER_RATIO) * t)
    return np.hypot(dx, dy) <= boundary


def obstacle_relief(obstacle: Obstacle, cell_size: float, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Height of an obstacle above the local surface.

    Returns:
        (mask, relief): cells covered by the obstacle and its height there.
    """
    ys = (np.arange(shape[0]) + 0.5) * cell_size
    xs = (np.arange(shape[1]) + 0.5) * cell_size
    dy = ys[:, None] - obstacle.pos[1]
    dx = xs[None, :] - obstacle.pos[0]
    r = obstacle.radius
    d2 = dx * dx + dy * dy
    mask = d2 <= r * r
    if obstacle.shape == ObstacleShape.CUBOID:
        relief = np.where(mask, r, 0.0)
    else:
        relief = np.sqrt(np.clip(r * r - d2, 0.0, None))
        if obstacle.shape == ObstacleShape.STAR:
            mask = mask & _star_mask(dx, dy, r)
        relief = np.where(mask, relief, 0.0)
    return mask, relief


def render_depth(
    state: SlopeState,
    obstacles: Sequence[Obstacle],
    config: Optional[ImagingConfig] = None,
) -> np.ndarray:
    """
    Top-view depth image: camera height minus surface elevation.

    The surface includes the tilted base plane; obstacles add their relief on
    top of the local surface.
    """
    cfg = _imaging_config(config)
    elevation = state.surface()
    extra = np.zeros_like(elevation)
    for obstacle in obstacles:
        mask, relief = obstacle_relief(obstacle, state.cell_size, state.shape)
        extra = np.where(mask, np.maximum(extra, relief), extra)
    return cfg.camera_height - (elevation + extra)


def delta_depth(x_t: np.ndarray, x_prev: Optional[np.ndarray], t: int) -> np.ndarray:
    """
    Change in depth between consecutive observations; all zeros at t = 0.

    Raises:
        ValueError: images differ in shape.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    if t == 0 or x_prev is None:
        return np.zeros_like(x_t)
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if x_prev.shape != x_t.shape:
        raise ValueError(f"depth images differ in shape: {x_t.shape} vs {x_prev.shape}")
    return x_t - x_prev


def action_image(action: ExcavationAction, grid_dims: Tuple[int, int], cell_size: float) -> np.ndarray:
    """
    Black image with a white square of the leg's side length at the action.

    x_start = max(0, x - A/2), x_end = min(H, x + A/2) on both axes, with A
    the footprint side in pixels.

    Raises:
        InvalidActionError: action center outside the grid.
    """
    rows, cols = grid_dims
    x, y = action.center
    if not (0.0 <= x <= cols * cell_size and 0.0 <= y <= rows * cell_size):
        raise InvalidActionError(f"action {action.index} center {action.center} outside the image")
    image = np.zeros((rows, cols), dtype=np.uint8)
    r0, r1, c0, c1 = footprint_bounds(action.center, action.footprint_side, cell_size, (rows, cols))
    image[r0:r1, c0:c1] = ACTION_ON
    return image


def obstacle_pixels(obstacle: Obstacle, cell_size: float, shape: Tuple[int, int]) -> np.ndarray:
    """Pixel set of an obstacle: cells whose centers lie inside its footprint disk."""
    return disk_mask(obstacle.pos, obstacle.radius, cell_size, shape)


def _obstacle_index(obstacles: Sequence[Obstacle], selected: int) -> int:
    for k, obstacle in enumerate(obstacles):
        if obstacle.id == selected:
            return k
    raise UnknownObstacleError(f"obstacle id {selected} not among {[o.id for o in obstacles]}")


def mask_window(
    obstacle: Obstacle,
    cell_size: float,
    shape: Tuple[int, int],
    window_factor: float = 3.0,
) -> Tuple[int, int, int, int]:
    """Clipped averaging window of side window_factor x radius centered on the obstacle."""
    side = max(1, int(round(window_factor * obstacle.radius / cell_size)))
    ci = min(max(int(obstacle.pos[1] / cell_size), 0), shape[0] - 1)
    cj = min(max(int(obstacle.pos[0] / cell_size), 0), shape[1] - 1)
    r0 = max(0, ci - side // 2)
    r1 = min(shape[0], ci + side - side // 2)
    c0 = max(0, cj - side // 2)
    c1 = min(shape[1], cj + side - side // 2)
    return r0, r1, c0, c1


def mask_depth(
    x: np.ndarray,
    obstacles: Sequence[Obstacle],
    selected: int,
    cell_size: float,
    config: Optional[ImagingConfig] = None,
) -> np.ndarray:
    """
    Hide every non-selected obstacle in a depth image.

    For each other obstacle, the mean of the input over its window (obstacle
    pixels included) replaces the obstacle's pixels inside that window.
    Window means are always taken from the unmodified input.

    Raises:
        UnknownObstacleError: selected id not among the obstacles.
    """
    cfg = _imaging_config(config)
    _obstacle_index(obstacles, selected)
    image = np.asarray(x, dtype=np.float64)
    out = image.copy()
    for obstacle in obstacles:
        if obstacle.id == selected:
            continue
        r0, r1, c0, c1 = mask_window(obstacle, cell_size, image.shape, cfg.mask_window_factor)
        if r1 <= r0 or c1 <= c0:
            continue
        avg = image[r0:r1, c0:c1].sum() / ((r1 - r0) * (c1 - c0))
        pixels = obstacle_pixels(obstacle, cell_size, image.shape)
        inside = np.zeros_like(pixels)
        inside[r0:r1, c0:c1] = pixels[r0:r1, c0:c1]
        out[inside] = avg
    return out


def mask_delta(
    dx: np.ndarray,
    obstacles: Sequence[Obstacle],
    selected: int,
    prev_positions: Optional[Sequence[Sequence[float]]],
    cell_size: float,
) -> np.ndarray:
    """
    Zero the depth change under every non-selected obstacle, at both its
    current and its previous position.

    Raises:
        UnknownObstacleError: selected id not among the obstacles.
    """
    _obstacle_index(obstacles, selected)
    out = np.array(dx, dtype=np.float64, copy=True)
    for k, obstacle in enumerate(obstacles):
        if obstacle.id == selected:
            continue
        out[obstacle_pixels(obstacle, cell_size, out.shape)] = 0.0
        if prev_positions is not None:
            previous = obstacle.moved_to(prev_positions[k])
            out[obstacle_pixels(previous, cell_size, out.shape)] = 0.0
    return out


def to_grayscale(image: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Min-max normalize to 8 bits. Returns (pixels, min, max)."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi <= lo:
        return np.zeros(image.shape, dtype=np.uint8), lo, hi
    scaled = np.round((image - lo) / (hi - lo) * 255.0)
    return scaled.astype(np.uint8), lo, hi


def burn_markers(
    gray: np.ndarray,
    cell_size: float,
    action: Optional[ExcavationAction] = None,
    targets: Sequence[Sequence[float]] = (),
    marker_size: int = 2,
) -> np.ndarray:
    """Draw the action square outline (white) and target crosses (black) on a grayscale image."""
    out = np.array(gray, dtype=np.uint8, copy=True)
    rows, cols = out.shape
    if action is not None:
        r0, r1, c0, c1 = footprint_bounds(action.center, action.footprint_side, cell_size, out.shape)
        if r1 > r0 and c1 > c0:
            out[r0, c0:c1] = 255
            out[r1 - 1, c0:c1] = 255
            out[r0:r1, c0] = 255
            out[r0:r1, c1 - 1] = 255
    for target in targets:
        i = min(max(int(target[1] / cell_size), 0), rows - 1)
        j = min(max(int(target[0] / cell_size), 0), cols - 1)
        out[max(0, i - marker_size):i + marker_size + 1, j] = 0
        out[i, max(0, j - marker_size):j + marker_size + 1] = 0
    return out


def write_pgm(gray: np.ndarray, path: str) -> str:
    """Write an 8-bit binary PGM."""
    gray = np.asarray(gray, dtype=np.uint8)
    rows, cols = gray.shape
    with open(path, 'wb') as f:
        f.write(f"P5\n{cols} {rows}\n255\n".encode('ascii'))
        f.write(gray.tobytes())
    return path


def export_pgm(image: np.ndarray, path: str, overlay=None) -> Tuple[str, str]:
    """
    Export a float image as 8-bit PGM plus a sidecar with the normalization bounds.

    Args:
        image: Float image (cm).
        path: Output .pgm path.
        overlay: Optional callable applied to the 8-bit pixels before writing.

    Returns:
        (pgm path, sidecar path).
    """
    gray, lo, hi = to_grayscale(image)
    if overlay is not None:
        gray = overlay(gray)
    write_pgm(gray, path)
    sidecar = str(Path(path).with_suffix('.txt'))
    with open(sidecar, 'w', encoding='utf-8') as f:
        f.write(f"min={lo!r} max={hi!r}\n")
    logger.debug(f"Wrote {path} (min={lo:.3f}, max={hi:.3f})")
    return path, sidecar


def read_pgm(path: str) -> np.ndarray:
    """Read an 8-bit binary PGM written by write_pgm."""
    with open(path, 'rb') as f:
        raw = f.read()
    parts = raw.split(b'\n', 3)
    if len(parts) < 4 or parts[0] != b'P5':
        raise ValueError(f"{path}: not a binary PGM")
    cols, rows = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=rows * cols).reshape(rows, cols)


def stack_channels(images: List[np.ndarray]) -> np.ndarray:
    """Channel-wise concatenation of spatially aligned images."""
    shapes = {np.shape(img) for img in images}
    if len(shapes) != 1:
        raise ValueError(f"images are not spatially aligned: {sorted(shapes)}")
    return np.stack([np.asarray(img, dtype=np.float64) for img in images], axis=0)
