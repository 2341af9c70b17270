"""Stage 3: ROI representative vectors, gated selection network, joint classifier training.

Per subject, the (R, R, R) relevance tensor is collapsed to two R-vectors: for
each seed row of the mean map, the sum of its at-least-row-mean entries and
the count of such entries. Stacked as two channels, they feed the selection
network (channel merge, three dense layers, binary-concrete gate). The gate
vector is symmetrized into an R x R multiplier, applied to the connectivity
matrix, and the masked input is classified by the pretrained bias-free
encoder plus a small softmax head; everything trains jointly on cross
entropy. During training the gate resamples its noise every forward pass; at
evaluation the gate is the deterministic threshold (ties select).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    DivergedError,
    MissingCacheError,
    NonFiniteError,
    SingleClassError,
)
from .linalg import RngStream, upper_indices, upper_size
from .nn import (
    AdamState,
    Conv1DChannelMerge,
    DenseLayer,
    GumbelGate,
    cross_entropy_grad,
    cross_entropy_loss,
)
from .lrp import mean_relevance


@dataclass(frozen=True)
class RepVectors:
    """Per-ROI masked sum (f_v) and count (f_c) of above-row-mean mean-map entries."""

    f_v: np.ndarray
    f_c: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.f_v, self.f_c], axis=1)


def representative_vectors(tensor: np.ndarray, mean_axis: int = 2) -> RepVectors:
    """Collapse one subject's (R, R, R) relevance tensor into the two ROI vectors.

    Row r of the mean map is thresholded at its own mean (strictly-below
    entries drop out; ties stay in): f_v[r] sums the surviving entries,
    f_c[r] counts them.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if not np.all(np.isfinite(tensor)):
        raise NonFiniteError("relevance tensor contains non-finite values")
    sbar = mean_relevance(tensor, mean_axis)
    row_mean = sbar.mean(axis=1)
    keep = sbar >= row_mean[:, None]
    f_v = (sbar * keep).sum(axis=1)
    f_c = keep.sum(axis=1).astype(np.float64)
    return RepVectors(f_v, f_c)


def symmetrize_gate(g: np.ndarray) -> np.ndarray:
    """Broadcast a gate vector to the symmetric matrix with entries (g_i + g_j) / 2."""
    g = np.asarray(g, dtype=np.float64)
    tiled = np.tile(g[:, None], (1, g.size))
    return (tiled + tiled.T) / 2.0


def gate_incidence(r: int) -> np.ndarray:
    """(D, R) map from gate vectors to flattened symmetric multipliers.

    ``flat_gate = g @ incidence.T`` reproduces flatten(symmetrize_gate(g)).
    """
    iu, ju = upper_indices(r)
    d = iu.size
    inc = np.zeros((d, r))
    inc[np.arange(d), iu] = 0.5
    inc[np.arange(d), ju] += 0.5
    return inc


def psi_hidden_dims(r: int, scale: float = 1.0) -> list[int]:
    """Selection-network hidden widths: a fixed first block, then 15 units per ROI."""
    return [max(4, round(512 * scale)), max(4, round(15 * r * scale))]


class PsiNetwork:
    """Channel merge + three dense layers + binary-concrete gate over R ROIs."""

    def __init__(
        self,
        r: int,
        rng: RngStream,
        channels: int = 2,
        tau: float = 0.01,
        hidden: list[int] | None = None,
    ):
        hidden = hidden if hidden is not None else psi_hidden_dims(r)
        self.r = r
        self.merge = Conv1DChannelMerge.from_channels(channels, rng.split(0))
        self.dense = [
            DenseLayer.from_dims(r, hidden[0], "relu", rng.split(1)),
            DenseLayer.from_dims(hidden[0], hidden[1], "relu", rng.split(2)),
            DenseLayer.from_dims(hidden[1], r, "identity", rng.split(3)),
        ]
        self.gate = GumbelGate(tau)
        self._logits: np.ndarray | None = None
        self._noise: np.ndarray | None = None

    def logits(self, feats: np.ndarray) -> np.ndarray:
        h = self.merge.forward(feats)
        for layer in self.dense:
            h = layer.forward(h)
        self._logits = h
        return h

    def forward(self, feats: np.ndarray, noise: np.ndarray | None = None, hard: bool = False) -> np.ndarray:
        """Gate vector in (0,1) (sample mode, requires noise) or {0,1} (hard mode)."""
        logits = self.logits(feats)
        if hard:
            self._noise = None
            return GumbelGate.hard_eval(logits)
        if noise is None:
            raise MissingCacheError("sample mode requires gate noise")
        self._noise = noise
        return self.gate.forward(logits, noise)

    def backward(self, grad_gate: np.ndarray) -> np.ndarray:
        if self._logits is None or self._noise is None:
            raise MissingCacheError("backward requires a sample-mode forward")
        grad = grad_gate * self.gate.grad(self._logits, self._noise)
        for layer in reversed(self.dense):
            grad = layer.backward(grad)
        return self.merge.backward(grad)

    def layers(self) -> list:
        return [self.merge] + self.dense

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers() for p in layer.parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers() for g in layer.gradients()]

    def zero_grad(self) -> None:
        for layer in self.layers():
            layer.zero_grad()


def make_classifier(in_dim: int, rng: RngStream, hidden: int = 10) -> list[DenseLayer]:
    """Two-layer softmax head used as the diagnostic classifier."""
    return [
        DenseLayer.from_dims(in_dim, hidden, "relu", rng.split(0)),
        DenseLayer.from_dims(hidden, 2, "softmax", rng.split(1)),
    ]


def classify(encoder: list[DenseLayer], clf: list[DenseLayer], fc: np.ndarray, gate_matrix: np.ndarray) -> np.ndarray:
    """Probability vector for one subject: classifier(encoder(flatten(fc * gate)))."""
    from .linalg import flatten_upper

    fc = np.asarray(fc, dtype=np.float64)
    if fc.shape != gate_matrix.shape:
        raise DimensionMismatchError("gate matrix shape must match the FC matrix")
    h = flatten_upper(fc * gate_matrix)
    for layer in encoder:
        h = layer.forward(h)
    for layer in clf:
        h = layer.forward(h)
    return h


@dataclass
class Step3Config:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 50
    weight_decay: float = 5e-5
    tau: float = 0.01
    seed: int = 0
    eval_every: int = 10  # epochs between validation snapshots (0 disables)


class Step3Model:
    """Joint gate + encoder + classifier over flattened connectivity inputs.

    ``ablation`` controls the wiring: "full" gates the input via the selection
    network; "I" drops the network (all-ones gate); "IV" drops it but appends
    the raw representative vectors to the classifier input; "V"/"VI" gate with
    only the sum or only the count channel.
    """

    def __init__(
        self,
        encoder: list[DenseLayer],
        psi: PsiNetwork | None,
        clf: list[DenseLayer],
        r: int,
        ablation: str = "full",
    ):
        self.encoder = encoder
        self.psi = psi
        self.clf = clf
        self.r = r
        self.ablation = ablation
        self.incidence = gate_incidence(r)
        self._cache: dict | None = None

    def trainable_layers(self) -> list:
        layers: list = [] if self.psi is None else self.psi.layers()
        return layers + self.encoder + self.clf

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.trainable_layers() for p in layer.parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.trainable_layers() for g in layer.gradients()]

    def zero_grad(self) -> None:
        for layer in self.trainable_layers():
            layer.zero_grad()

    def gate_vectors(self, feats: np.ndarray | None, n: int, hard: bool = True) -> np.ndarray:
        """Selection vectors for reporting; the all-ones gate when there is no selection network."""
        if self.psi is None:
            return np.ones((n, self.r))
        return self.psi.forward(feats, hard=hard)

    def forward(
        self,
        flats: np.ndarray,
        feats: np.ndarray | None,
        noise: np.ndarray | None = None,
        hard: bool = False,
    ) -> np.ndarray:
        """Class probabilities, shape (N, 2). ``flats`` is (N, D), ``feats`` (N, R, C)."""
        flats = np.asarray(flats, dtype=np.float64)
        if flats.shape[-1] != upper_size(self.r):
            raise DimensionMismatchError("flattened input does not match the ROI count")
        if self.psi is not None:
            g = self.psi.forward(feats, noise=noise, hard=hard)
            flat_gate = g @ self.incidence.T
            gated = flats * flat_gate
        else:
            g = None
            gated = flats
        h = gated
        for layer in self.encoder:
            h = layer.forward(h)
        if self.ablation == "IV":
            h = np.concatenate([h, feats.reshape(feats.shape[0], -1)], axis=1)
        clf_in = h
        for layer in self.clf:
            h = layer.forward(h)
        self._cache = {"flats": flats, "gate": g, "clf_in": clf_in}
        return h

    def backward(self, grad_probs: np.ndarray) -> None:
        """Accumulate gradients for the cached sample-mode forward."""
        if self._cache is None:
            raise MissingCacheError("backward called before forward")
        grad = grad_probs
        for layer in reversed(self.clf):
            grad = layer.backward(grad)
        if self.ablation == "IV":
            enc_out = self.encoder[-1].cache[2].shape[-1]
            grad = grad[:, :enc_out]
        for layer in reversed(self.encoder):
            grad = layer.backward(grad)
        if self.psi is not None:
            grad_gate = (grad * self._cache["flats"]) @ self.incidence
            self.psi.backward(grad_gate)


def _onehot(labels: np.ndarray) -> np.ndarray:
    return np.eye(2)[np.asarray(labels, dtype=np.int64)]


@dataclass
class Step3Result:
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None


def train_step3(
    model: Step3Model,
    flats: np.ndarray,
    feats: np.ndarray | None,
    labels: np.ndarray,
    cfg: Step3Config,
    train_idx: np.ndarray,
    val_idx: np.ndarray | None = None,
) -> Step3Result:
    """Joint Adam training on cross entropy; keeps the best validation-AUC snapshot.

    Gate noise is resampled from the config-seeded stream on every forward;
    validation scoring always uses the hard gate. With ``lr == 0`` parameters
    are untouched. Raises ``DivergedError`` on a non-finite loss.
    """
    from .evaluation import roc_auc

    labels = np.asarray(labels, dtype=np.int64)
    onehot = _onehot(labels)
    rng = RngStream(cfg.seed)
    noise_rng = rng.split(0)
    shuffle_rng = rng.split(1)
    opt = AdamState(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    result = Step3Result()
    best_auc = -np.inf
    best_snapshot = None
    for epoch in range(cfg.epochs):
        order = train_idx[shuffle_rng.permutation(train_idx.size)]
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_feats = None if feats is None else feats[idx]
            noise = None
            if model.psi is not None:
                noise = model.psi.gate.draw_noise(idx.size * model.r, noise_rng).reshape(idx.size, model.r)
            probs = model.forward(flats[idx], batch_feats, noise=noise)
            loss = cross_entropy_loss(onehot[idx], probs)
            if not np.isfinite(loss):
                raise DivergedError(f"classification loss diverged at epoch {epoch}")
            model.zero_grad()
            model.backward(cross_entropy_grad(onehot[idx], probs))
            opt.step(model.gradients())
            epoch_loss += loss
            n_batches += 1
        row = {"epoch": epoch, "train_loss": epoch_loss / n_batches}
        if val_idx is not None and val_idx.size and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            val_feats = None if feats is None else feats[val_idx]
            val_probs = model.forward(flats[val_idx], val_feats, hard=True)
            try:
                val_auc = roc_auc(val_probs[:, 1], labels[val_idx])
            except SingleClassError:
                val_auc = float("nan")
            row["val_auc"] = val_auc
            if np.isfinite(val_auc) and val_auc > best_auc:
                best_auc = val_auc
                best_snapshot = [p.copy() for p in model.parameters()]
                result.best_epoch = epoch
        result.history.append(row)
    if best_snapshot is not None:
        for p, snap in zip(model.parameters(), best_snapshot):
            p[...] = snap
    return result


# --- margin classifier for the vector-only ablations -------------------------


@dataclass
class MarginClassifier:
    """Linear max-margin classifier (hinge loss + L2) on standardized features."""

    w: np.ndarray
    b: float
    mean: np.ndarray
    scale: np.ndarray

    def scores(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return z @ self.w + self.b

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.scores(x) >= 0.0).astype(np.int64)


def fit_margin_classifier(
    x: np.ndarray,
    labels: np.ndarray,
    epochs: int = 500,
    lr: float = 0.05,
    l2: float = 1e-3,
) -> MarginClassifier:
    """Deterministic full-batch subgradient training from a zero initialization."""
    x = np.asarray(x, dtype=np.float64)
    y = np.where(np.asarray(labels) > 0, 1.0, -1.0)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale == 0.0, 1.0, scale)
    z = (x - mean) / scale
    w = np.zeros(x.shape[1])
    b = np.zeros(1)
    opt = AdamState([w, b], lr=lr)
    for _ in range(epochs):
        margin = y * (z @ w + b[0])
        viol = margin < 1.0
        grad_w = -(z * (y * viol)[:, None]).mean(axis=0) + 2.0 * l2 * w
        grad_b = np.array([-(y * viol).mean()])
        opt.step([grad_w, grad_b])
    return MarginClassifier(w=w, b=float(b[0]), mean=mean, scale=scale)
