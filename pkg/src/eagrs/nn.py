"""Dense neural-network core: layers, activations, losses, Adam, gradient checking.

Every network in the pipeline (encoder, generator, ROI-selection network,
classifier) is assembled from these pieces. Forward passes cache inputs and
pre-activations on the layer instance, so a layer (and any model built from
layers) is single-owner during forward/backward; clone models for concurrent
inference.

Checkpoints use a little-endian binary container (magic ``EAGM``) that
round-trips parameters bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidProbabilityError,
    MissingCacheError,
    NonFiniteError,
    NonPositiveTemperatureError,
    ParseError,
    UnknownActivationError,
)
from .linalg import RngStream

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid", "selu", "softmax")

PROB_CLAMP = 1e-12  # floor applied to probabilities before log


def activation(kind: str, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if kind == "identity":
        return z.copy()
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "selu":
        return np.where(z > 0.0, SELU_LAMBDA * z, SELU_LAMBDA * SELU_ALPHA * np.expm1(z))
    if kind == "softmax":
        shifted = z - np.max(z, axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / np.sum(e, axis=-1, keepdims=True)
    raise UnknownActivationError(f"unknown activation {kind!r}")


def activation_grad(kind: str, z: np.ndarray) -> np.ndarray:
    """Derivative of the activation at z.

    Elementwise activations return the Jacobian diagonal (same shape as z);
    softmax returns the full Jacobian (last axis squared).
    """
    z = np.asarray(z, dtype=np.float64)
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if kind == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    if kind == "selu":
        return np.where(z > 0.0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(z, 0.0)))
    if kind == "softmax":
        p = activation("softmax", z)
        eye = np.eye(z.shape[-1])
        return p[..., :, None] * (eye - p[..., None, :])
    raise UnknownActivationError(f"unknown activation {kind!r}")


def activation_and_grad(kind: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("activation input contains non-finite entries")
    return activation(kind, z), activation_grad(kind, z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def glorot_uniform(out_dim: int, in_dim: int, rng: RngStream) -> np.ndarray:
    """Uniform init in +-sqrt(6/(fan_in+fan_out)) from a seeded stream."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    u = rng.uniform(out_dim * in_dim)
    return ((2.0 * u - 1.0) * limit).reshape(out_dim, in_dim)


class DenseLayer:
    """Fully connected layer ``activation(W x (+ b))`` with W of shape (out, in).

    ``forward`` caches input, pre-activation, and output so that ``backward``
    and relevance propagation can run without recomputation.
    """

    def __init__(self, weights: np.ndarray, bias: np.ndarray | None, act: str):
        if act not in ACTIVATIONS:
            raise UnknownActivationError(f"unknown activation {act!r}")
        self.w = np.asarray(weights, dtype=np.float64)
        if self.w.ndim != 2:
            raise DimensionMismatchError("weights must be 2-D (out, in)")
        if bias is not None:
            bias = np.asarray(bias, dtype=np.float64)
            if bias.shape != (self.w.shape[0],):
                raise DimensionMismatchError("bias shape must match output dim")
        self.b = bias
        self.activation = act
        self.grad_w = np.zeros_like(self.w)
        self.grad_b = np.zeros_like(self.b) if bias is not None else None
        self.cache: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    @classmethod
    def from_dims(
        cls,
        in_dim: int,
        out_dim: int,
        act: str,
        rng: RngStream,
        bias: bool = True,
    ) -> "DenseLayer":
        w = glorot_uniform(out_dim, in_dim, rng)
        b = np.zeros(out_dim) if bias else None
        return cls(w, b, act)

    @property
    def in_dim(self) -> int:
        return self.w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    @property
    def bias_enabled(self) -> bool:
        return self.b is not None

    def strip_bias(self) -> None:
        self.b = None
        self.grad_b = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise DimensionMismatchError(
                f"input dim {x.shape[-1]} != layer in_dim {self.in_dim}"
            )
        z = x @ self.w.T
        if self.b is not None:
            z = z + self.b
        a = activation(self.activation, z)
        self.cache = (x, z, a)
        return a

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return gradient w.r.t. the input.

        ``grad_out`` is dLoss/d(output activation) for the cached forward.
        """
        if self.cache is None:
            raise MissingCacheError("backward called before forward")
        x, z, a = self.cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if self.activation == "softmax":
            inner = np.sum(grad_out * a, axis=-1, keepdims=True)
            dz = a * (grad_out - inner)
        else:
            dz = grad_out * activation_grad(self.activation, z)
        if dz.ndim == 1:
            self.grad_w += np.outer(dz, x)
            if self.grad_b is not None:
                self.grad_b += dz
        else:
            self.grad_w += dz.T @ x
            if self.grad_b is not None:
                self.grad_b += dz.sum(axis=0)
        return dz @ self.w

    def zero_grad(self) -> None:
        self.grad_w[...] = 0.0
        if self.grad_b is not None:
            self.grad_b[...] = 0.0

    def parameters(self) -> list[np.ndarray]:
        return [self.w] if self.b is None else [self.w, self.b]

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_w] if self.grad_b is None else [self.grad_w, self.grad_b]


class Conv1DChannelMerge:
    """Learnable per-ROI channel merge: out[r] = sum_c kernel[c] * in[r, c] + bias.

    Equivalent to a 1-D convolution with a (channels x 1) kernel and stride 1,
    applied independently at each ROI position.
    """

    def __init__(self, kernel: np.ndarray, bias: np.ndarray):
        self.kernel = np.asarray(kernel, dtype=np.float64).reshape(-1)
        self.bias = np.asarray(bias, dtype=np.float64).reshape(1)
        self.grad_kernel = np.zeros_like(self.kernel)
        self.grad_bias = np.zeros_like(self.bias)
        self.cache: np.ndarray | None = None

    @classmethod
    def from_channels(cls, channels: int, rng: RngStream) -> "Conv1DChannelMerge":
        kernel = glorot_uniform(1, channels, rng).reshape(-1)
        return cls(kernel, np.zeros(1))

    @property
    def channels(self) -> int:
        return self.kernel.size

    def forward(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        if f.shape[-1] != self.channels:
            raise DimensionMismatchError(
                f"expected {self.channels} channels, got {f.shape[-1]}"
            )
        self.cache = f
        return f @ self.kernel + self.bias[0]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self.cache is None:
            raise MissingCacheError("backward called before forward")
        f = self.cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        flat_f = f.reshape(-1, self.channels)
        flat_g = grad_out.reshape(-1)
        self.grad_kernel += flat_g @ flat_f
        self.grad_bias[0] += flat_g.sum()
        return grad_out[..., None] * self.kernel

    def zero_grad(self) -> None:
        self.grad_kernel[...] = 0.0
        self.grad_bias[...] = 0.0

    def parameters(self) -> list[np.ndarray]:
        return [self.kernel, self.bias]

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_kernel, self.grad_bias]


class GumbelGate:
    """Per-unit binary-concrete gate.

    Sample mode draws two Gumbel(0,1) variates per unit from the stream and
    returns ``sigmoid((logits + g1 - g0) / tau)``, which is differentiable in
    the logits once the noise is fixed. Hard-eval mode thresholds
    ``sigmoid(logits)`` at 0.5 (ties select), independent of any noise.
    """

    def __init__(self, tau: float):
        if not tau > 0.0:
            raise NonPositiveTemperatureError(f"temperature must be positive, got {tau}")
        self.tau = float(tau)

    def draw_noise(self, n: int, rng: RngStream) -> np.ndarray:
        g1 = rng.gumbel(n)
        g0 = rng.gumbel(n)
        return g1 - g0

    def forward(self, logits: np.ndarray, noise: np.ndarray) -> np.ndarray:
        logits = np.asarray(logits, dtype=np.float64)
        return sigmoid((logits + noise) / self.tau)

    def grad(self, logits: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """d(gate)/d(logits) at fixed noise (elementwise)."""
        s = self.forward(logits, noise)
        return s * (1.0 - s) / self.tau

    @staticmethod
    def hard_eval(logits: np.ndarray) -> np.ndarray:
        logits = np.asarray(logits, dtype=np.float64)
        return (logits >= 0.0).astype(np.float64)


def mse_loss(x: np.ndarray, xhat: np.ndarray) -> float:
    """Mean squared error over all elements."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise DimensionMismatchError(f"shape mismatch {x.shape} vs {xhat.shape}")
    return float(np.mean((x - xhat) ** 2))


def mse_grad(x: np.ndarray, xhat: np.ndarray) -> np.ndarray:
    """Gradient of :func:`mse_loss` w.r.t. ``xhat``."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise DimensionMismatchError(f"shape mismatch {x.shape} vs {xhat.shape}")
    return 2.0 * (xhat - x) / x.size


def cross_entropy_loss(y: np.ndarray, p: np.ndarray) -> float:
    """Cross entropy -sum(y log p), averaged over the batch.

    ``y`` is one-hot, ``p`` a probability vector (rows summing to 1 within
    1e-9). Probabilities are clamped at 1e-12 before the log.
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if y.shape != p.shape:
        raise DimensionMismatchError(f"shape mismatch {y.shape} vs {p.shape}")
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-9) or np.any(p < -1e-12) or np.any(p > 1.0 + 1e-12):
        raise InvalidProbabilityError("rows must be probability vectors summing to 1")
    logp = np.log(np.maximum(p, PROB_CLAMP))
    return float(np.mean(-np.sum(y * logp, axis=-1)))


def cross_entropy_grad(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Gradient of :func:`cross_entropy_loss` w.r.t. the probabilities."""
    y2 = np.atleast_2d(np.asarray(y, dtype=np.float64))
    p2 = np.atleast_2d(np.asarray(p, dtype=np.float64))
    grad = -y2 / np.maximum(p2, PROB_CLAMP) / y2.shape[0]
    return grad.reshape(np.shape(p))


@dataclass
class AdamState:
    """Adam optimizer with classic coupled L2 weight decay (lambda * theta added to the gradient)."""

    params: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
        if not self.v:
            self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise DimensionMismatchError("gradient list does not match parameters")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise DimensionMismatchError("gradient shape does not match parameter")
            geff = g + self.weight_decay * p if self.weight_decay else g
            m *= self.beta1
            m += (1.0 - self.beta1) * geff
            v *= self.beta2
            v += (1.0 - self.beta2) * geff**2
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(state: AdamState, grads: list[np.ndarray]) -> None:
    state.step(grads)


def gradient_check(loss_and_grads, params: list[np.ndarray], eps: float = 1e-6) -> float:
    """Max relative error between analytic and central finite-difference gradients.

    ``loss_and_grads()`` must return ``(loss, grads)`` for the current values
    of ``params`` (arrays mutated in place during probing). Relative error is
    ``|g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-12)``.
    """
    loss0, grads = loss_and_grads()
    if not np.isfinite(loss0):
        raise NonFiniteError("loss is non-finite at the probe point")
    grads = [g.copy() for g in grads]
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + eps
            lp, _ = loss_and_grads()
            flat_p[k] = orig - eps
            lm, _ = loss_and_grads()
            flat_p[k] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteError("loss is non-finite during finite-difference probe")
            fd = (lp - lm) / (2.0 * eps)
            err = abs(fd - flat_g[k]) / max(abs(fd), abs(flat_g[k]), 1e-12)
            worst = max(worst, err)
    return worst


# --- checkpoint container -------------------------------------------------

CHECKPOINT_MAGIC = b"EAGM"
CHECKPOINT_VERSION = 1

_KIND_DENSE = 0
_KIND_CONV_MERGE = 1


def save_layers(path, layers, meta: int = 0) -> None:
    """Write layers to the binary checkpoint container (bit-exact round-trip).

    Layout: magic, u32 version, u32 layer count, u32 meta word, then per
    layer: u8 kind, u8 activation tag, u8 bias flag, u8 pad, u32 in_dim,
    u32 out_dim, f64 weights row-major, f64 bias (if flagged). All
    little-endian. ``meta`` is free for the caller (the autoencoder stores its
    encoder depth there).
    """
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<III", CHECKPOINT_VERSION, len(layers), meta)
    for layer in layers:
        if isinstance(layer, DenseLayer):
            act_tag = ACTIVATIONS.index(layer.activation)
            has_bias = layer.b is not None
            blob += struct.pack(
                "<BBBBII", _KIND_DENSE, act_tag, int(has_bias), 0, layer.in_dim, layer.out_dim
            )
            blob += np.ascontiguousarray(layer.w, dtype="<f8").tobytes()
            if has_bias:
                blob += np.ascontiguousarray(layer.b, dtype="<f8").tobytes()
        elif isinstance(layer, Conv1DChannelMerge):
            blob += struct.pack("<BBBBII", _KIND_CONV_MERGE, 0, 1, 0, layer.channels, 1)
            blob += np.ascontiguousarray(layer.kernel, dtype="<f8").tobytes()
            blob += np.ascontiguousarray(layer.bias, dtype="<f8").tobytes()
        else:
            raise DimensionMismatchError(f"cannot serialize layer type {type(layer)!r}")
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_layers(path) -> tuple[list, int]:
    """Read a checkpoint written by :func:`save_layers`; returns (layers, meta)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"not a valid checkpoint file: {path}")
    version, count, meta = struct.unpack_from("<III", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version} in {path}")
    offset = 16
    layers: list = []
    for _ in range(count):
        kind, act_tag, has_bias, _pad, in_dim, out_dim = struct.unpack_from("<BBBBII", data, offset)
        offset += 12
        if kind == _KIND_DENSE:
            n = in_dim * out_dim
            w = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(out_dim, in_dim)
            offset += 8 * n
            b = None
            if has_bias:
                b = np.frombuffer(data, dtype="<f8", count=out_dim, offset=offset).copy()
                offset += 8 * out_dim
            layers.append(DenseLayer(w.copy(), b, ACTIVATIONS[act_tag]))
        elif kind == _KIND_CONV_MERGE:
            kernel = np.frombuffer(data, dtype="<f8", count=in_dim, offset=offset).copy()
            offset += 8 * in_dim
            bias = np.frombuffer(data, dtype="<f8", count=1, offset=offset).copy()
            offset += 8
            layers.append(Conv1DChannelMerge(kernel, bias))
        else:
            raise ParseError(f"unknown layer kind {kind} in {path}")
    return layers, meta
