"""
Binary file formats for transition datasets and trained models.

Both formats are little-endian with a magic string and a version number in
front. Float grids are stored as 32-bit floats.
"""

import logging
import struct
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DATASET_MAGIC = b'GRAINDS\x00'
DATASET_VERSION = 1
_DATASET_HEADER = struct.Struct('<8sHIIId')  # magic, version, count, rows, cols, cell_size

MODEL_MAGIC = b'GRAINMDL'
MODEL_VERSION = 1
MODEL_DIMS = ('rows', 'cols', 'channels', 'patch_size', 'embed_dim', 'depth', 'num_heads', 'ff_dim', 'head_hidden')
_MODEL_HEADER = struct.Struct('<8sHB' + 'I' * len(MODEL_DIMS) + 'd')  # ..., dims, cell_size


class FormatError(ValueError):
    """Raised when a dataset or model file is malformed."""
    pass


@dataclass
class TransitionRecord:
    """One observed excavation: observation before, action, obstacle before and after."""
    trial: int
    step: int
    action_index: int
    action_center: Tuple[float, float]
    s_t: Tuple[float, float]
    s_next: Tuple[float, float]
    x: np.ndarray  # depth image before the excavation (cm)
    dx: np.ndarray  # change from the previous depth image (cm)


def record_dtype(rows: int, cols: int) -> np.dtype:
    return np.dtype([
        ('trial', '<u4'),
        ('step', 'u1'),
        ('action', 'u1'),
        ('center', '<f4', (2,)),
        ('s_t', '<f4', (2,)),
        ('s_next', '<f4', (2,)),
        ('x', '<f4', (rows, cols)),
        ('dx', '<f4', (rows, cols)),
    ])


def write_dataset(path: str, records: Sequence[TransitionRecord], cell_size: float) -> int:
    """
    Write records to path.

    Returns:
        Number of bytes written.
    """
    if not records:
        raise FormatError("cannot write an empty dataset")
    rows, cols = records[0].x.shape
    table = np.zeros(len(records), dtype=record_dtype(rows, cols))
    for k, rec in enumerate(records):
        if rec.x.shape != (rows, cols) or rec.dx.shape != (rows, cols):
            raise FormatError(f"record {k} grid {rec.x.shape} does not match {rows}x{cols}")
        table[k] = (rec.trial, rec.step, rec.action_index, rec.action_center, rec.s_t, rec.s_next, rec.x, rec.dx)

    header = _DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(records), rows, cols, float(cell_size))
    payload = table.tobytes()
    with open(path, 'wb') as f:
        f.write(header)
        f.write(payload)
    logger.info(f"Wrote {len(records)} records ({rows}x{cols}) to {path}")
    return len(header) + len(payload)


def read_dataset(path: str) -> Tuple[List[TransitionRecord], float]:
    """
    Read a dataset file.

    Returns:
        (records, cell_size).

    Raises:
        FormatError: bad magic, unsupported version, or size mismatch.
    """
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < _DATASET_HEADER.size:
        raise FormatError(f"{path}: truncated dataset header")
    magic, version, count, rows, cols, cell_size = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    if rows == 0 or cols == 0 or not cell_size > 0:
        raise FormatError(f"{path}: invalid grid {rows}x{cols} at {cell_size} cm")
    dtype = record_dtype(rows, cols)
    expected = _DATASET_HEADER.size + count * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {count} records, got {len(raw)}")

    table = np.frombuffer(raw, dtype=dtype, count=count, offset=_DATASET_HEADER.size)
    records = [
        TransitionRecord(
            trial=int(row['trial']),
            step=int(row['step']),
            action_index=int(row['action']),
            action_center=(float(row['center'][0]), float(row['center'][1])),
            s_t=(float(row['s_t'][0]), float(row['s_t'][1])),
            s_next=(float(row['s_next'][0]), float(row['s_next'][1])),
            x=row['x'].astype(np.float64),
            dx=row['dx'].astype(np.float64),
        )
        for row in table
    ]
    return records, float(cell_size)


def write_model_file(
    path: str,
    variant: int,
    dims: Dict[str, int],
    cell_size: float,
    channel_mean: np.ndarray,
    channel_scale: np.ndarray,
    tensors: Sequence[np.ndarray],
) -> None:
    """Header, per-channel standardization (float64), then tensors as float32 in the given order."""
    missing = [name for name in MODEL_DIMS if name not in dims]
    if missing:
        raise FormatError(f"model header missing dims: {', '.join(missing)}")
    with open(path, 'wb') as f:
        f.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, variant,
                                   *(int(dims[n]) for n in MODEL_DIMS), float(cell_size)))
        f.write(np.asarray(channel_mean, dtype='<f8').tobytes())
        f.write(np.asarray(channel_scale, dtype='<f8').tobytes())
        for tensor in tensors:
            f.write(np.ascontiguousarray(tensor, dtype='<f4').tobytes())


def read_model_header(
    raw: bytes,
    path: str = '<model>',
) -> Tuple[int, Dict[str, int], float, np.ndarray, np.ndarray, int]:
    """
    Parse the model header.

    Returns:
        (variant, dims, cell_size, channel_mean, channel_scale, offset of the first tensor).
    """
    if len(raw) < _MODEL_HEADER.size:
        raise FormatError(f"{path}: truncated model header")
    magic, version, variant, *values = _MODEL_HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model file")
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    cell_size = float(values.pop())
    dims = dict(zip(MODEL_DIMS, values))
    if not cell_size > 0 or any(dims[n] == 0 for n in MODEL_DIMS):
        raise FormatError(f"{path}: invalid architecture header {dims} at {cell_size} cm")
    channels = dims['channels']
    offset = _MODEL_HEADER.size
    stats_bytes = 2 * channels * 8
    if channels == 0 or len(raw) < offset + stats_bytes:
        raise FormatError(f"{path}: truncated standardization block")
    mean = np.frombuffer(raw, dtype='<f8', count=channels, offset=offset).astype(np.float64)
    scale = np.frombuffer(raw, dtype='<f8', count=channels, offset=offset + channels * 8).astype(np.float64)
    return variant, dims, cell_size, mean, scale, offset + stats_bytes


def read_tensors(raw: bytes, offset: int, shapes: Sequence[Tuple[int, ...]], path: str = '<model>') -> List[np.ndarray]:
    """Slice float32 tensors of the given shapes out of raw, starting at offset."""
    expected = offset + sum(int(np.prod(s)) for s in shapes) * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes of parameters, got {len(raw)}")
    out = []
    for shape in shapes:
        n = int(np.prod(shape))
        out.append(np.frombuffer(raw, dtype='<f4', count=n, offset=offset).reshape(shape).astype(np.float64))
        offset += n * 4
    return out
