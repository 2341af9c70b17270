"""Relevance propagation over the pre-trained autoencoder and per-ROI score maps.

Relevance starts at a chosen output unit with that unit's post-activation
value and is redistributed layer by layer through the linear part of each
dense layer:

    R_i <- sum_j (a_i * w_ji / (z_j + eps * sign(z_j))) * R_j

with ``eps = 0`` for the plain conservative rule and ``eps > 0`` for the
stabilized rule. Activations only enter through the cached ``a`` and ``z``;
they are treated as identity for redistribution. The propagation is linear in
the relevance vector, so a map aggregated over many output units equals a
single pass seeded with all of them at once; the per-unit loop is kept in the
tests as the oracle.

The per-subject score tensor stacks, for every seed ROI r, the input-level
map obtained by masking ROI r, reconstructing, and propagating back from the
reconstructed connections incident to r (self-connections excluded, masked
rows zeroed). Tensor files use a little-endian binary container (magic
``EAGR``) with float32 payloads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    MissingCacheError,
    ParseError,
    UnitOutOfRangeError,
)
from .fcdata import MaskSet, apply_mask
from .linalg import flatten_upper, pair_to_flat, unflatten_upper, upper_size
from .sae import SAEModel


@dataclass(frozen=True)
class RelevanceRule:
    """Redistribution rule: ``zero`` (eps = 0, exactly conservative) or ``epsilon``."""

    kind: str = "epsilon"
    eps: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("zero", "epsilon"):
            raise DimensionMismatchError(f"unknown relevance rule {self.kind!r}")
        if self.kind == "zero" and self.eps != 0.0:
            raise DimensionMismatchError("zero rule requires eps == 0")
        if self.eps < 0.0:
            raise DimensionMismatchError("eps must be non-negative")


ZERO_RULE = RelevanceRule("zero", 0.0)
EPSILON_RULE = RelevanceRule("epsilon", 1e-6)


def _layer_caches(model: SAEModel):
    caches = []
    for layer in model.forward_stack():
        if layer.cache is None:
            raise MissingCacheError("run a forward pass before propagating relevance")
        x, z, _ = layer.cache
        caches.append((layer.w, x, z))
    return caches


def propagate_step(w: np.ndarray, a: np.ndarray, z: np.ndarray, rel: np.ndarray, rule: RelevanceRule) -> np.ndarray:
    """One layer of redistribution; zero denominators contribute nothing."""
    denom = z + rule.eps * np.where(z >= 0.0, 1.0, -1.0)
    ratio = np.divide(rel, denom, out=np.zeros_like(rel), where=denom != 0.0)
    return a * (ratio @ w)


def lrp_backward_seed(model: SAEModel, seed: np.ndarray, rule: RelevanceRule = EPSILON_RULE) -> np.ndarray:
    """Propagate an output-level relevance vector back to the input connections."""
    caches = _layer_caches(model)
    out_dim = caches[-1][0].shape[0]
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape[-1] != out_dim:
        raise DimensionMismatchError(f"seed length {seed.shape[-1]} != output dim {out_dim}")
    rel = seed
    for w, a, z in reversed(caches):
        rel = propagate_step(w, a, z, rel, rule)
    return rel


def lrp_backward(model: SAEModel, output_unit: int, rule: RelevanceRule = EPSILON_RULE) -> np.ndarray:
    """Input-level relevance for one output unit, seeded with that unit's output value."""
    caches = _layer_caches(model)
    w_last, _, z_last = caches[-1]
    out_dim = w_last.shape[0]
    if not 0 <= output_unit < out_dim:
        raise UnitOutOfRangeError(f"output unit {output_unit} out of range ({out_dim})")
    _, _, a_last = model.forward_stack()[-1].cache
    seed = np.zeros(out_dim)
    seed[output_unit] = a_last[..., output_unit]
    return lrp_backward_seed(model, seed, rule)


def phi(model: SAEModel, seed_roi: int, target_roi: int, r: int, rule: RelevanceRule = EPSILON_RULE) -> np.ndarray:
    """Input-relevance map for reconstructed connection (seed_roi, target_roi).

    Assumes the model's caches come from reconstructing the input masked at
    ``seed_roi``. Returns the zero block when the target is the seed (the
    excluded self-connection); otherwise the unflattened input relevance with
    the masked ROI's row and column forced to zero (they already are, since
    masked inputs carry zero activation).
    """
    if not (0 <= seed_roi < r and 0 <= target_roi < r):
        raise UnitOutOfRangeError(f"ROI pair ({seed_roi},{target_roi}) out of range for R={r}")
    if seed_roi == target_roi:
        return np.zeros((r, r))
    unit = pair_to_flat(seed_roi, target_roi, r)
    rel = lrp_backward(model, unit, rule)
    out = unflatten_upper(rel, r)
    out[seed_roi, :] = 0.0
    out[:, seed_roi] = 0.0
    return out


def relevance_for_seed(model: SAEModel, fc: np.ndarray, seed_roi: int, rule: RelevanceRule = EPSILON_RULE) -> np.ndarray:
    """Aggregated relevance map for one seed ROI (sum of per-target maps).

    Masks exactly ``seed_roi``, reconstructs, then propagates back from all
    reconstructed connections incident to the seed in a single pass (linearity
    makes this identical to summing the per-target maps).
    """
    fc = np.asarray(fc, dtype=np.float64)
    r = fc.shape[0]
    masked = apply_mask(fc, MaskSet(frozenset({seed_roi}), 0.0))
    recon = model.reconstruct(flatten_upper(masked))
    seed = np.zeros(upper_size(r))
    for j in range(r):
        if j != seed_roi:
            unit = pair_to_flat(seed_roi, j, r)
            seed[unit] = recon[unit]
    rel = lrp_backward_seed(model, seed, rule)
    out = unflatten_upper(rel, r)
    out[seed_roi, :] = 0.0
    out[:, seed_roi] = 0.0
    return out


def global_relevance(model: SAEModel, fc: np.ndarray, rule: RelevanceRule = EPSILON_RULE) -> np.ndarray:
    """Stack of per-seed relevance maps, shape (R, R, R) indexed [seed, i, j]."""
    fc = np.asarray(fc, dtype=np.float64)
    r = fc.shape[0]
    return np.stack([relevance_for_seed(model, fc, roi, rule) for roi in range(r)])


# --- tensor container -------------------------------------------------------

TENSOR_MAGIC = b"EAGR"
TENSOR_VERSION = 1


def save_relevance_tensors(path, tensors: np.ndarray) -> None:
    """Write an (N, R, R, R) stack as float32 blocks in subject order."""
    tensors = np.asarray(tensors)
    if tensors.ndim != 4 or not (tensors.shape[1] == tensors.shape[2] == tensors.shape[3]):
        raise DimensionMismatchError("expected an (N, R, R, R) tensor stack")
    n, r = tensors.shape[0], tensors.shape[1]
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<III", TENSOR_VERSION, r, n))
        fh.write(np.ascontiguousarray(tensors, dtype="<f4").tobytes())


def load_relevance_tensors(path) -> np.ndarray:
    """Read tensors written by :func:`save_relevance_tensors` (float32, shape (N, R, R, R))."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != TENSOR_MAGIC:
        raise ParseError(f"not a relevance tensor file: {path}")
    version, r, n = struct.unpack_from("<III", data, 4)
    if version != TENSOR_VERSION:
        raise ParseError(f"unsupported tensor file version {version}")
    expected = 16 + 4 * n * r * r * r
    if len(data) != expected:
        raise ParseError(f"tensor file truncated: {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(n, r, r, r).copy()


def mean_relevance(tensor: np.ndarray, axis: int = 2) -> np.ndarray:
    """Per-seed mean map: average the (R, R, R) tensor over the chosen trailing axis."""
    if axis not in (1, 2):
        raise DimensionMismatchError("mean axis must be 1 or 2")
    return np.asarray(tensor, dtype=np.float64).mean(axis=axis)
