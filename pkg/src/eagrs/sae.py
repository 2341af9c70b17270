"""Stage 1: greedy layer-wise masked-reconstruction pretraining.

The model is an encoder/generator stack over flattened connection vectors.
Layer pairs are trained one at a time: pair 1 reconstructs the original
(unmasked) vector from an ROI-masked input; pair l >= 2 trains on a mix of
the end-to-end reconstruction (decoded through the frozen shallower
generators) and the reconstruction of its own hidden input, weighted alpha
and (1 - alpha). A fresh ROI mask is drawn for every input on every
iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, DivergedError, NotTrainedError
from .linalg import RngStream, upper_size
from .nn import AdamState, DenseLayer, load_layers, mse_grad, mse_loss, save_layers
from .fcdata import mask_flat, sample_mask


def default_hidden_dims(d: int, scale: float = 1.0) -> list[int]:
    """Two hidden widths proportional to the input size (about 1.5x and 0.3x)."""
    return [max(2, round(1.5 * d * scale)), max(2, round(0.3 * d * scale))]


@dataclass
class Step1Config:
    q: float = 0.1
    alpha: float = 0.5
    lr: float = 1e-3
    batch_size: int = 50
    epochs: int = 300
    weight_decay: float = 5e-5
    seed: int = 0
    patience: int | None = None  # early stopping on validation loss, off by default
    val_fraction: float = 0.1


class SAEModel:
    """Encoder/generator stack with per-layer freeze flags.

    Encoder layer 1 uses SELU, every other layer (encoder and generator alike)
    uses tanh, so the final reconstruction lives in (-1, 1) like the
    correlation targets. Generators mirror the encoder dims in reverse;
    generator l reconstructs the input of encoder l.
    """

    def __init__(self, dims: list[int], rng: RngStream):
        if len(dims) < 2:
            raise DimensionMismatchError("need input dim plus at least one hidden dim")
        self.dims = list(dims)
        self.encoders: list[DenseLayer] = []
        self.generators: list[DenseLayer] = []
        for level in range(1, len(dims)):
            act = "selu" if level == 1 else "tanh"
            self.encoders.append(
                DenseLayer.from_dims(dims[level - 1], dims[level], act, rng.split(2 * level))
            )
            self.generators.append(
                DenseLayer.from_dims(dims[level], dims[level - 1], "tanh", rng.split(2 * level + 1))
            )
        self.trained_levels: set[int] = set()

    @property
    def depth(self) -> int:
        return len(self.encoders)

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    def encode(self, x: np.ndarray, upto: int | None = None) -> np.ndarray:
        h = x
        for enc in self.encoders[: upto if upto is not None else self.depth]:
            h = enc.forward(h)
        return h

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """Full encode/decode pass; layer caches stay populated for relevance propagation."""
        h = self.encode(x)
        for gen in reversed(self.generators):
            h = gen.forward(h)
        return h

    def forward_stack(self) -> list[DenseLayer]:
        """Layers in forward order for the full reconstruction pass."""
        return list(self.encoders) + list(reversed(self.generators))

    def require_trained(self) -> None:
        if self.trained_levels != set(range(1, self.depth + 1)):
            raise NotTrainedError(
                f"model has trained levels {sorted(self.trained_levels)} of {self.depth}"
            )

    def clone(self) -> "SAEModel":
        dup = SAEModel.__new__(SAEModel)
        dup.dims = list(self.dims)
        dup.encoders = [DenseLayer(e.w.copy(), None if e.b is None else e.b.copy(), e.activation) for e in self.encoders]
        dup.generators = [DenseLayer(g.w.copy(), None if g.b is None else g.b.copy(), g.activation) for g in self.generators]
        dup.trained_levels = set(self.trained_levels)
        return dup


def save_checkpoint(model: SAEModel, path) -> None:
    save_layers(path, list(model.encoders) + list(model.generators), meta=model.depth)


def load_checkpoint(path) -> SAEModel:
    layers, depth = load_layers(path)
    if len(layers) != 2 * depth:
        raise DimensionMismatchError("checkpoint layer count does not match its depth word")
    model = SAEModel.__new__(SAEModel)
    model.encoders = layers[:depth]
    model.generators = layers[depth:]
    model.dims = [model.encoders[0].in_dim] + [e.out_dim for e in model.encoders]
    model.trained_levels = set(range(1, depth + 1))
    return model


def _check_finite_loss(value: float) -> float:
    if not np.isfinite(value):
        raise DivergedError(f"training loss is non-finite ({value})")
    return value


def _split_validation(n: int, cfg: Step1Config, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    if cfg.patience is None:
        return np.arange(n), np.empty(0, dtype=np.int64)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_layer(model: SAEModel, flats: np.ndarray, cfg: Step1Config, level: int) -> list[dict]:
    """Train encoder/generator pair ``level`` with shallower pairs frozen.

    ``flats`` holds the flattened unmasked connection vectors (N x D). Returns
    one log row per epoch: {"layer", "epoch", "rec_loss_x", "rec_loss_h"}.
    Frozen layers are never updated (their parameters are bit-identical before
    and after), but gradients do flow through the frozen generators so the
    end-to-end term reaches the pair under training.
    """
    if level < 1 or level > model.depth:
        raise DimensionMismatchError(f"no layer pair {level} in a depth-{model.depth} model")
    if level > 1 and not all(l in model.trained_levels for l in range(1, level)):
        raise NotTrainedError(f"layer pairs below {level} must be trained first")
    flats = np.asarray(flats, dtype=np.float64)
    if flats.ndim != 2 or flats.shape[1] != model.input_dim:
        raise DimensionMismatchError("training data must be N x D")

    r = _roi_count(model.input_dim)
    rng = RngStream(cfg.seed).split(level)
    mask_rng = rng.split(0)
    shuffle_rng = rng.split(1)
    train_idx, val_idx = _split_validation(flats.shape[0], cfg, rng.split(2))

    enc = model.encoders[level - 1]
    gen = model.generators[level - 1]
    opt = AdamState(
        enc.parameters() + gen.parameters(),
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
    )

    log: list[dict] = []
    best_val = np.inf
    best_snapshot = None
    stale = 0
    for epoch in range(cfg.epochs):
        order = train_idx[shuffle_rng.permutation(train_idx.size)]
        sum_x = 0.0
        sum_h = 0.0
        n_batches = 0
        for start in range(0, order.size, cfg.batch_size):
            batch = flats[order[start : start + cfg.batch_size]]
            masked = np.stack([mask_flat(row, sample_mask(r, cfg.q, mask_rng), r) for row in batch])
            loss_x, loss_h = _layer_step(model, enc, gen, batch, masked, cfg.alpha, level, opt)
            sum_x += _check_finite_loss(loss_x)
            sum_h += loss_h
            n_batches += 1
        row = {
            "layer": level,
            "epoch": epoch,
            "rec_loss_x": sum_x / n_batches,
            "rec_loss_h": (sum_h / n_batches) if level > 1 else float("nan"),
        }
        log.append(row)
        if cfg.patience is not None and val_idx.size:
            val_loss = _epoch_objective(model, enc, gen, flats[val_idx], cfg, level, mask_rng)
            if val_loss < best_val:
                best_val = val_loss
                best_snapshot = [p.copy() for p in enc.parameters() + gen.parameters()]
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    if best_snapshot is not None:
        for p, snap in zip(enc.parameters() + gen.parameters(), best_snapshot):
            p[...] = snap
    model.trained_levels.add(level)
    return log


def _roi_count(d: int) -> int:
    r = int(round((1 + np.sqrt(1 + 8 * d)) / 2))
    if upper_size(r) != d:
        raise DimensionMismatchError(f"{d} is not of the form R(R-1)/2")
    return r


def _layer_step(model, enc, gen, batch, masked, alpha, level, opt) -> tuple[float, float]:
    """One Adam update on the pair (enc, gen); returns (end-to-end loss, hidden loss)."""
    h_prev = masked
    for frozen in model.encoders[: level - 1]:
        h_prev = frozen.forward(h_prev)
    h = enc.forward(h_prev)
    h_prev_hat = gen.forward(h)
    x_hat = h_prev_hat
    for frozen in reversed(model.generators[: level - 1]):
        x_hat = frozen.forward(x_hat)

    loss_x = mse_loss(batch, x_hat)
    if level == 1:
        loss_h = 0.0
        grad_out = mse_grad(batch, x_hat)
    else:
        loss_h = mse_loss(h_prev, h_prev_hat)
        grad_out = alpha * mse_grad(batch, x_hat)

    enc.zero_grad()
    gen.zero_grad()
    for frozen in model.generators[: level - 1]:
        frozen.zero_grad()

    grad = grad_out
    for frozen in model.generators[: level - 1]:
        grad = frozen.backward(grad)
    if level > 1:
        grad = grad + (1.0 - alpha) * mse_grad(h_prev, h_prev_hat)
    grad = gen.backward(grad)
    enc.backward(grad)
    opt.step(enc.gradients() + gen.gradients())
    return loss_x, loss_h


def _epoch_objective(model, enc, gen, flats, cfg, level, mask_rng) -> float:
    r = _roi_count(model.input_dim)
    masked = np.stack([mask_flat(row, sample_mask(r, cfg.q, mask_rng), r) for row in flats])
    h_prev = masked
    for frozen in model.encoders[: level - 1]:
        h_prev = frozen.forward(h_prev)
    h = enc.forward(h_prev)
    h_prev_hat = gen.forward(h)
    x_hat = h_prev_hat
    for frozen in reversed(model.generators[: level - 1]):
        x_hat = frozen.forward(x_hat)
    if level == 1:
        return mse_loss(flats, x_hat)
    return cfg.alpha * mse_loss(flats, x_hat) + (1 - cfg.alpha) * mse_loss(h_prev, h_prev_hat)


def pretrain(model: SAEModel, flats: np.ndarray, cfg: Step1Config) -> list[dict]:
    """Run greedy layer-wise training over all pairs; returns the combined log."""
    log: list[dict] = []
    for level in range(1, model.depth + 1):
        log.extend(train_layer(model, flats, cfg, level))
    return log
