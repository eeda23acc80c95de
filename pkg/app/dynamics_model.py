"""
Learned one-step obstacle dynamics.

A small patch-attention regressor reads the channel stack (depth, depth change,
action image) and predicts where the obstacle will be after the excavation.
The vector ablation drops the action image and feeds the normalized action
location to the regression head instead.

Inputs are standardized per channel with statistics frozen at training time.
All computation runs in float64; model files store parameters as float32.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import (ImagingConfig, ModelConfig, TrainingConfig,
                        format_duration, get_settings)
from app.utils.autograd import (NumericError, Tensor, check_finite, concat,
                                layer_norm, parameter, zero_grad)
from app.utils.granular_sim import ExcavationAction, Obstacle
from app.utils.imaging import (action_image, mask_delta, mask_depth,
                               stack_channels)
from app.utils.io_formats import (FormatError, TransitionRecord,
                                  read_model_header, read_tensors,
                                  write_model_file)

logger = logging.getLogger(__name__)

MIN_CHANNEL_SCALE = 1e-6
PREDICT_BATCH = 64


class ModelVariant(str, Enum):
    """How the excavation action reaches the model."""
    GRAIN = "grain"  # action image as a third input channel
    VECTOR_ABLATION = "vector_ablation"  # action location fed to the head


_VARIANT_CODES = {ModelVariant.GRAIN: 0, ModelVariant.VECTOR_ABLATION: 1}


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_mae_cm: float


@dataclass
class ModelParams:
    """Learnable tensors of the regressor plus the frozen input statistics."""
    config: ModelConfig
    rows: int
    cols: int
    cell_size: float
    tensors: Dict[str, Tensor]
    channel_mean: np.ndarray
    channel_scale: np.ndarray
    history: List[EpochStats] = field(default_factory=list)

    variant: ClassVar[ModelVariant] = ModelVariant.GRAIN
    channels: ClassVar[int] = 3
    action_features: ClassVar[int] = 0

    @property
    def extent(self) -> np.ndarray:
        """Trackway (width, length) in cm."""
        return np.array([self.cols * self.cell_size, self.rows * self.cell_size])

    @property
    def num_tokens(self) -> int:
        p = self.config.patch_size
        return (self.rows // p) * (self.cols // p)

    def parameters(self) -> List[Tensor]:
        return list(self.tensors.values())

    def arrays(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter array, in declared order."""
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, value in arrays.items():
            self.tensors[name].data = np.array(value, dtype=np.float64, copy=True)

    def dims(self) -> Dict[str, int]:
        cfg = self.config
        return {
            'rows': self.rows, 'cols': self.cols, 'channels': self.channels,
            'patch_size': cfg.patch_size, 'embed_dim': cfg.embed_dim, 'depth': cfg.depth,
            'num_heads': cfg.num_heads, 'ff_dim': cfg.ff_dim, 'head_hidden': cfg.head_hidden,
        }


class AblationParams(ModelParams):
    """Two-channel backbone; the head also sees the action location in [0, 1]^2."""
    variant = ModelVariant.VECTOR_ABLATION
    channels = 2
    action_features = 2


_PARAMS_BY_VARIANT = {ModelVariant.GRAIN: ModelParams, ModelVariant.VECTOR_ABLATION: AblationParams}


def param_shapes(
    config: ModelConfig,
    rows: int,
    cols: int,
    channels: int,
    action_features: int = 0,
) -> Dict[str, Tuple[int, ...]]:
    """Every parameter name and shape, in the order they are stored."""
    p, d, f = config.patch_size, config.embed_dim, config.ff_dim
    tokens = (rows // p) * (cols // p)
    shapes: Dict[str, Tuple[int, ...]] = {
        'patch.weight': (channels * p * p, d),
        'patch.bias': (d,),
        'pos_embed': (tokens, d),
    }
    for b in range(config.depth):
        shapes.update({
            f'block{b}.norm1.gain': (d,),
            f'block{b}.norm1.bias': (d,),
            f'block{b}.attn.query': (d, d),
            f'block{b}.attn.key': (d, d),
            f'block{b}.attn.value': (d, d),
            f'block{b}.attn.proj.weight': (d, d),
            f'block{b}.attn.proj.bias': (d,),
            f'block{b}.norm2.gain': (d,),
            f'block{b}.norm2.bias': (d,),
            f'block{b}.ff1.weight': (d, f),
            f'block{b}.ff1.bias': (f,),
            f'block{b}.ff2.weight': (f, d),
            f'block{b}.ff2.bias': (d,),
        })
    shapes.update({
        'norm.gain': (d,),
        'norm.bias': (d,),
        'head1.weight': (d + action_features, config.head_hidden),
        'head1.bias': (config.head_hidden,),
        'head2.weight': (config.head_hidden, 2),
        'head2.bias': (2,),
    })
    return shapes


def init_params(
    config: ModelConfig,
    rows: int,
    cols: int,
    cell_size: float,
    seed: int,
    variant: ModelVariant = ModelVariant.GRAIN,
) -> ModelParams:
    """
    Randomly initialized parameters.

    Weights are drawn from N(0, init_scale^2); biases start at 0 and norm
    gains at 1.

    Raises:
        ConfigError: patch size does not divide the grid or heads do not divide the width.
    """
    config.validate(rows, cols)
    cls = _PARAMS_BY_VARIANT[ModelVariant(variant)]
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config, rows, cols, cls.channels, cls.action_features).items():
        if name.endswith('.gain'):
            value = np.ones(shape)
        elif name.endswith('.bias'):
            value = np.zeros(shape)
        else:
            value = rng.normal(0.0, config.init_scale, size=shape)
        tensors[name] = parameter(value, name=name)
    return cls(
        config=config, rows=rows, cols=cols, cell_size=float(cell_size), tensors=tensors,
        channel_mean=np.zeros(cls.channels), channel_scale=np.ones(cls.channels),
    )


# Inputs

def model_input(
    x: np.ndarray,
    dx: np.ndarray,
    action: ExcavationAction,
    cell_size: float,
) -> np.ndarray:
    """Channel stack (depth, depth change, action image) of shape (3, rows, cols)."""
    image = action_image(action, np.shape(x), cell_size)
    return stack_channels([x, dx, image])


def ablation_input(x: np.ndarray, dx: np.ndarray) -> np.ndarray:
    return stack_channels([x, dx])


def action_vector(action: ExcavationAction, extent: Sequence[float]) -> np.ndarray:
    """Action location normalized to [0, 1]^2."""
    return np.asarray(action.center, dtype=np.float64) / np.asarray(extent, dtype=np.float64)


def standardization(inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-channel mean and scale over a stack of inputs (N, C, rows, cols).

    Channels with a standard deviation below 1e-6 get a scale of 1.
    """
    channels = inputs.shape[1]
    mean = np.zeros(channels)
    scale = np.ones(channels)
    for c in range(channels):
        values = np.asarray(inputs[:, c], dtype=np.float64)
        mean[c] = values.mean()
        std = values.std()
        scale[c] = std if std >= MIN_CHANNEL_SCALE else 1.0
    return mean, scale


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, C, R, W) -> (B, tokens, C * patch * patch), tokens in row-major patch order."""
    b, c, r, w = images.shape
    grid = images.reshape(b, c, r // patch, patch, w // patch, patch)
    grid = grid.transpose(0, 2, 4, 1, 3, 5)
    return grid.reshape(b, (r // patch) * (w // patch), c * patch * patch)


# Forward pass

def _attention(params: ModelParams, block: int, h: Tensor) -> Tensor:
    w = params.tensors
    batch, tokens, dim = h.shape
    heads = params.config.num_heads
    head_dim = dim // heads

    def split(t: Tensor) -> Tensor:
        return t.reshape(batch, tokens, heads, head_dim).transpose(0, 2, 1, 3)

    q = split(h @ w[f'block{block}.attn.query'])
    k = split(h @ w[f'block{block}.attn.key'])
    v = split(h @ w[f'block{block}.attn.value'])
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(head_dim))
    context = scores.softmax(axis=-1) @ v
    context = context.transpose(0, 2, 1, 3).reshape(batch, tokens, dim)
    return context @ w[f'block{block}.attn.proj.weight'] + w[f'block{block}.attn.proj.bias']


def _encode(params: ModelParams, inputs: np.ndarray) -> Tensor:
    """Backbone: standardize, embed patches, run the blocks, pool tokens."""
    w = params.tensors
    normalized = (inputs - params.channel_mean[None, :, None, None]) / params.channel_scale[None, :, None, None]
    patches = Tensor(patchify(normalized, params.config.patch_size))

    t = check_finite(patches @ w['patch.weight'] + w['patch.bias'] + w['pos_embed'], 'patch_embed')
    for b in range(params.config.depth):
        h = layer_norm(t, w[f'block{b}.norm1.gain'], w[f'block{b}.norm1.bias'])
        t = check_finite(t + _attention(params, b, h), f'block{b}.attention')
        h = layer_norm(t, w[f'block{b}.norm2.gain'], w[f'block{b}.norm2.bias'])
        hidden = (h @ w[f'block{b}.ff1.weight'] + w[f'block{b}.ff1.bias']).gelu()
        t = check_finite(t + (hidden @ w[f'block{b}.ff2.weight'] + w[f'block{b}.ff2.bias']), f'block{b}.feed_forward')
    t = layer_norm(t, w['norm.gain'], w['norm.bias'])
    return check_finite(t.mean(axis=1), 'pool')


def forward_batch(
    params: ModelParams,
    inputs: np.ndarray,
    action_vectors: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Predicted positions (B, 2) in cm as a differentiable tensor.

    Raises:
        ValueError: inputs do not match the model's channels and grid, or the
            ablation variant is called without action vectors.
        NumericError: non-finite activations; the error names the layer.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    expected = (params.channels, params.rows, params.cols)
    if inputs.ndim != 4 or inputs.shape[1:] != expected:
        raise ValueError(f"expected inputs of shape (B, {expected[0]}, {expected[1]}, {expected[2]}), got {inputs.shape}")
    w = params.tensors
    pooled = _encode(params, inputs)
    if params.action_features:
        if action_vectors is None:
            raise ValueError("the vector ablation needs action vectors")
        action_vectors = np.asarray(action_vectors, dtype=np.float64).reshape(inputs.shape[0], params.action_features)
        pooled = concat([pooled, Tensor(action_vectors)], axis=-1)
    hidden = (pooled @ w['head1.weight'] + w['head1.bias']).gelu()
    unit = check_finite((hidden @ w['head2.weight'] + w['head2.bias']).sigmoid(), 'head')
    return unit * params.extent


def predict_batch(
    params: ModelParams,
    inputs: np.ndarray,
    action_vectors: Optional[np.ndarray] = None,
    batch_size: int = PREDICT_BATCH,
) -> np.ndarray:
    """Inference in chunks; predictions clipped to the trackway."""
    out = np.zeros((len(inputs), 2))
    for start in range(0, len(inputs), batch_size):
        chunk = slice(start, start + batch_size)
        vectors = None if action_vectors is None else action_vectors[chunk]
        out[chunk] = forward_batch(params, np.asarray(inputs[chunk], dtype=np.float64), vectors).data
    return np.clip(out, 0.0, params.extent)


def forward(params: ModelParams, model_in: np.ndarray) -> np.ndarray:
    """Predicted obstacle position (x, y) in cm for one (3, rows, cols) input."""
    if params.action_features:
        raise ValueError("use forward_ablation for the vector ablation")
    return predict_batch(params, np.asarray(model_in)[None])[0]


def forward_ablation(
    params: AblationParams,
    x: np.ndarray,
    dx: np.ndarray,
    action: ExcavationAction,
) -> np.ndarray:
    """Predicted obstacle position for the vector ablation."""
    if not params.action_features:
        raise ValueError("forward_ablation needs AblationParams")
    vector = action_vector(action, params.extent)
    return predict_batch(params, ablation_input(x, dx)[None], vector[None])[0]


# Loss and gradients

def loss(pred: Sequence[float], truth: Sequence[float], extent: Sequence[float]) -> float:
    """Euclidean distance between prediction and truth in trackway-normalized coordinates."""
    diff = (np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)) / np.asarray(extent)
    return float(np.linalg.norm(diff))


def batch_loss(pred: Tensor, truths: np.ndarray, extent: np.ndarray) -> Tensor:
    """Mean per-sample normalized distance."""
    return ((pred - truths) / extent).norm(axis=-1).mean()


def gradients(
    params: ModelParams,
    inputs: np.ndarray,
    truths: np.ndarray,
    action_vectors: Optional[np.ndarray] = None,
    loss_scale: float = 1.0,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean batch loss and its gradient for every parameter.

    Raises:
        ValueError: empty batch.
        NumericError: non-finite activations or loss.
    """
    if len(inputs) == 0:
        raise ValueError("gradients need a nonempty batch")
    zero_grad(params.parameters())
    value = batch_loss(forward_batch(params, inputs, action_vectors), np.asarray(truths, dtype=np.float64),
                       params.extent) * loss_scale
    check_finite(value, 'loss')
    value.backward()
    grads = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
             for name, t in params.tensors.items()}
    return float(value.data), grads


class Adam:
    """Adaptive per-parameter steps with bias correction."""

    def __init__(self, tensors: Dict[str, Tensor], config: TrainingConfig):
        self.tensors = tensors
        self.config = config
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in tensors.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in tensors.items()}

    def step(self) -> None:
        cfg = self.config
        self.t += 1
        correction1 = 1.0 - cfg.beta1 ** self.t
        correction2 = 1.0 - cfg.beta2 ** self.t
        for name, p in self.tensors.items():
            if p.grad is None:
                continue
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * p.grad
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * p.grad * p.grad
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            p.data = p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


# Training

@dataclass
class TrainingArrays:
    """Dataset records converted to model inputs."""
    inputs: np.ndarray  # (N, C, rows, cols) float32
    truths: np.ndarray  # (N, 2) cm
    action_vectors: np.ndarray  # (N, 2) in [0, 1]
    trials: np.ndarray  # (N,)


def records_to_arrays(
    records: Sequence[TransitionRecord],
    variant: ModelVariant,
    cell_size: float,
    footprint_side: float,
) -> TrainingArrays:
    """Build the model inputs for every record."""
    rows, cols = records[0].x.shape
    extent = np.array([cols * cell_size, rows * cell_size])
    channels = _PARAMS_BY_VARIANT[ModelVariant(variant)].channels
    inputs = np.zeros((len(records), channels, rows, cols), dtype=np.float32)
    truths = np.zeros((len(records), 2))
    vectors = np.zeros((len(records), 2))
    trials = np.zeros(len(records), dtype=np.int64)
    for k, rec in enumerate(records):
        action = ExcavationAction(index=rec.action_index, center=rec.action_center, footprint_side=footprint_side)
        if channels == 3:
            inputs[k] = model_input(rec.x, rec.dx, action, cell_size)
        else:
            inputs[k] = ablation_input(rec.x, rec.dx)
        truths[k] = rec.s_next
        vectors[k] = action_vector(action, extent)
        trials[k] = rec.trial
    return TrainingArrays(inputs=inputs, truths=truths, action_vectors=vectors, trials=trials)


def split_by_trial(
    trials: np.ndarray,
    validation_fraction: float,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Record indices for training and validation; whole trials go to one side.

    With a single trial, or a zero fraction, the validation split is empty.
    """
    unique = np.unique(trials)
    n_val = int(round(len(unique) * validation_fraction))
    if validation_fraction > 0 and n_val == 0 and len(unique) > 1:
        n_val = 1
    n_val = min(n_val, len(unique) - 1)
    held_out = set(rng.permutation(unique)[:n_val].tolist())
    is_val = np.array([t in held_out for t in trials.tolist()], dtype=bool)
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def _flip_across_slope(
    inputs: np.ndarray,
    truths: np.ndarray,
    vectors: np.ndarray,
    flips: np.ndarray,
    width: float,
) -> None:
    inputs[flips] = inputs[flips][..., ::-1]
    truths[flips, 0] = width - truths[flips, 0]
    vectors[flips, 0] = 1.0 - vectors[flips, 0]


def evaluate_mae(
    params: ModelParams,
    inputs: np.ndarray,
    truths: np.ndarray,
    action_vectors: Optional[np.ndarray] = None,
) -> float:
    """Mean Euclidean prediction error in cm."""
    vectors = action_vectors if params.action_features else None
    preds = predict_batch(params, inputs, vectors)
    return float(np.mean(np.linalg.norm(preds - truths, axis=1)))


def train(
    records: Sequence[TransitionRecord],
    seed: int,
    model_config: Optional[ModelConfig] = None,
    training: Optional[TrainingConfig] = None,
    variant: ModelVariant = ModelVariant.GRAIN,
    cell_size: Optional[float] = None,
    footprint_side: Optional[float] = None,
    log_path: Optional[str] = None,
) -> ModelParams:
    """
    Fit the regressor with minibatch Adam and keep the best-validation parameters.

    Records are split into training and validation sets by trial. Per-epoch
    metrics are logged and, if log_path is given, written as CSV
    (epoch, train_loss, val_MAE_cm).

    Raises:
        ValueError: empty dataset.
        NumericError: non-finite loss or activations during training.
    """
    if not records:
        raise ValueError("cannot train on an empty dataset")
    settings = get_settings()
    model_config = model_config or settings.model
    training = training or settings.training
    cell_size = cell_size if cell_size is not None else settings.simulator.cell_size
    footprint_side = footprint_side if footprint_side is not None else settings.simulator.footprint_side
    variant = ModelVariant(variant)

    data = records_to_arrays(records, variant, cell_size, footprint_side)
    rows, cols = data.inputs.shape[2:]
    rng = np.random.default_rng(seed)
    train_idx, val_idx = split_by_trial(data.trials, training.validation_fraction, rng)
    if len(val_idx) == 0:
        val_idx = train_idx
    logger.info(
        f"Training {variant.value} model on {len(train_idx)} records "
        f"({len(np.unique(data.trials[train_idx]))} trials), validating on {len(val_idx)}"
    )

    params = init_params(model_config, rows, cols, cell_size, seed, variant)
    params.channel_mean, params.channel_scale = standardization(data.inputs[train_idx])
    optimizer = Adam(params.tensors, training)
    width = float(params.extent[0])

    log_file = open(log_path, 'w', newline='', encoding='utf-8') if log_path else None
    writer = csv.writer(log_file) if log_file else None
    if writer:
        writer.writerow(['epoch', 'train_loss', 'val_MAE_cm'])

    started = time.time()
    best_mae = math.inf
    best_arrays = params.arrays()
    history: List[EpochStats] = []
    try:
        for epoch in range(1, training.epochs + 1):
            order = rng.permutation(train_idx)
            total = 0.0
            for start in range(0, len(order), training.batch_size):
                idx = order[start:start + training.batch_size]
                batch_x = data.inputs[idx].astype(np.float64)
                batch_y = data.truths[idx].copy()
                batch_v = data.action_vectors[idx].copy()
                if training.flip_augmentation:
                    _flip_across_slope(batch_x, batch_y, batch_v, rng.random(len(idx)) < 0.5, width)

                zero_grad(params.parameters())
                pred = forward_batch(params, batch_x, batch_v if params.action_features else None)
                value = batch_loss(pred, batch_y, params.extent)
                if not np.isfinite(value.data):
                    raise NumericError('loss', f"non-finite loss at epoch {epoch}, batch starting at {start}")
                value.backward()
                optimizer.step()
                total += float(value.data) * len(idx)

            stats = EpochStats(
                epoch=epoch,
                train_loss=total / len(train_idx),
                val_mae_cm=evaluate_mae(params, data.inputs[val_idx], data.truths[val_idx],
                                        data.action_vectors[val_idx]),
            )
            history.append(stats)
            if writer:
                writer.writerow([stats.epoch, repr(stats.train_loss), repr(stats.val_mae_cm)])
            logger.info(f"Epoch {epoch}/{training.epochs}: train_loss={stats.train_loss:.5f} "
                        f"val_MAE={stats.val_mae_cm:.3f} cm")
            if stats.val_mae_cm < best_mae:
                best_mae = stats.val_mae_cm
                best_arrays = params.arrays()
    except NumericError as e:
        logger.error(f"Training diverged in layer '{e.layer}' after {len(history)} epoch(s): {e}")
        raise
    finally:
        if log_file:
            log_file.close()

    params.load_arrays(best_arrays)
    params.history = history
    logger.info(f"Training finished in {format_duration(time.time() - started)}; best val MAE {best_mae:.3f} cm")
    return params


# Multi-obstacle prediction

def predict_actions(
    params: ModelParams,
    x: np.ndarray,
    dx: np.ndarray,
    actions: Sequence[ExcavationAction],
    obstacles: Sequence[Obstacle],
    prev_positions: Optional[Sequence[Sequence[float]]] = None,
    imaging: Optional[ImagingConfig] = None,
) -> np.ndarray:
    """
    Predictions for every (action, obstacle) pair, shape (n_actions, K, 2).

    Each obstacle is predicted from its own masked images, with every other
    obstacle hidden.
    """
    if not obstacles:
        raise ValueError("prediction needs at least one obstacle")
    cs = params.cell_size
    masked = [
        (mask_depth(x, obstacles, obstacle.id, cs, imaging),
         mask_delta(dx, obstacles, obstacle.id, prev_positions, cs))
        for obstacle in obstacles
    ]
    inputs = []
    vectors = []
    for action in actions:
        image = None if params.action_features else action_image(action, (params.rows, params.cols), cs)
        vector = action_vector(action, params.extent)
        for xm, dxm in masked:
            inputs.append(stack_channels([xm, dxm]) if image is None else stack_channels([xm, dxm, image]))
            vectors.append(vector)
    preds = predict_batch(params, np.stack(inputs), np.stack(vectors) if params.action_features else None)
    return preds.reshape(len(actions), len(obstacles), 2)


def predict_multi(
    params: ModelParams,
    x: np.ndarray,
    dx: np.ndarray,
    action: ExcavationAction,
    obstacles: Sequence[Obstacle],
    prev_positions: Optional[Sequence[Sequence[float]]] = None,
    imaging: Optional[ImagingConfig] = None,
) -> List[np.ndarray]:
    """One prediction per obstacle for a single action, in obstacle order."""
    preds = predict_actions(params, x, dx, [action], obstacles, prev_positions, imaging)
    return [p for p in preds[0]]


class LearnedDynamics:
    """Dynamics predictor backed by a trained model."""

    def __init__(self, params: ModelParams, imaging: Optional[ImagingConfig] = None):
        self.params = params
        self.imaging = imaging
        self.name = params.variant.value

    def predict(self, observation, actions: Sequence[ExcavationAction]) -> np.ndarray:
        return predict_actions(
            self.params, observation.depth, observation.delta, actions,
            observation.obstacles, observation.prev_positions, self.imaging,
        )


# Model files

def save_model(params: ModelParams, path: str) -> None:
    """Write the versioned model file."""
    write_model_file(
        path,
        _VARIANT_CODES[params.variant],
        params.dims(),
        params.cell_size,
        params.channel_mean,
        params.channel_scale,
        [t.data for t in params.tensors.values()],
    )
    logger.info(f"Saved {params.variant.value} model to {path}")


def load_model(path: str, init_scale: float = 0.02) -> ModelParams:
    """
    Read a model file.

    Raises:
        FormatError: unknown variant or malformed contents.
    """
    with open(path, 'rb') as f:
        raw = f.read()
    code, dims, cell_size, mean, scale, offset = read_model_header(raw, path)
    variants = {v: k for k, v in _VARIANT_CODES.items()}
    if code not in variants:
        raise FormatError(f"{path}: unknown model variant {code}")
    cls = _PARAMS_BY_VARIANT[variants[code]]
    if dims['channels'] != cls.channels:
        raise FormatError(f"{path}: {variants[code].value} model with {dims['channels']} channels")
    config = ModelConfig(
        patch_size=dims['patch_size'], embed_dim=dims['embed_dim'], depth=dims['depth'],
        num_heads=dims['num_heads'], ff_dim=dims['ff_dim'], head_hidden=dims['head_hidden'],
        init_scale=init_scale,
    )
    shapes = param_shapes(config, dims['rows'], dims['cols'], cls.channels, cls.action_features)
    arrays = read_tensors(raw, offset, list(shapes.values()), path)
    tensors = {name: parameter(value, name=name) for name, value in zip(shapes, arrays)}
    return cls(
        config=config, rows=dims['rows'], cols=dims['cols'], cell_size=cell_size, tensors=tensors,
        channel_mean=mean, channel_scale=scale,
    )
