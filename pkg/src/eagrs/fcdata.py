"""Data layer: Pearson connectivity, ROI-level masking, synthetic cohorts, dataset I/O.

A dataset on disk is a JSON-lines manifest (one record per subject:
``{"id", "label", "site", "fc_path"}``) next to per-subject CSV files holding
the R x R connectivity matrix with a header row of ROI names. Paths in the
manifest are relative to the manifest file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyGroupError,
    IndexOutOfRangeError,
    InvalidRatioError,
    MissingFileError,
    NonFiniteError,
    ParseError,
    ZeroVarianceError,
)
from .linalg import RngStream, check_square_symmetric, upper_indices


@dataclass(frozen=True)
class MaskSet:
    """Masked ROI indices drawn at ratio q: size max(1, floor(q*R)) when q > 0."""

    indices: frozenset[int]
    q: float


@dataclass
class Subject:
    id: str
    fc: np.ndarray
    label: int
    site: str | None = None


@dataclass(frozen=True)
class SyntheticConfig:
    """Synthetic cohort with class-specific correlated ROI groups.

    ``planted`` maps a class label to a tuple of variants; subjects of that
    class cycle through the variants (several variants model within-class
    subtypes). A variant is a tuple of ROI groups, and within each group all
    ROI pairs get latent correlation ``effect_size``.

    Optional realism knobs: ``coupling_jitter`` scales each subject's planted
    correlation by a per-subject uniform draw from the given range, and a
    positive ``background_rank``/``background_weight`` blends in a
    subject-specific low-rank correlation structure that is class-neutral
    (loud but uninformative connections).
    """

    n_rois: int
    n_per_class: int
    n_timepoints: int
    effect_size: float
    seed: int
    planted: dict[int, tuple[tuple[tuple[int, ...], ...], ...]] = field(default_factory=dict)
    coupling_jitter: tuple[float, float] | None = None
    background_rank: int = 0
    background_weight: float = 0.0

    def __post_init__(self):
        for label, variants in self.planted.items():
            for variant in variants:
                for group in variant:
                    if any(not 0 <= r < self.n_rois for r in group):
                        raise IndexOutOfRangeError(f"planted ROI out of range for class {label}")
        if self.effect_size < 0:
            raise InvalidRatioError("effect_size must be non-negative")
        if not 0.0 <= self.background_weight < 1.0:
            raise InvalidRatioError("background_weight must be in [0, 1)")
        if self.coupling_jitter is not None and self.coupling_jitter[0] > self.coupling_jitter[1]:
            raise InvalidRatioError("coupling_jitter range is inverted")


def pearson_fc(series: np.ndarray) -> np.ndarray:
    """Pearson correlation matrix of an (R x T) BOLD series.

    Diagonal is exactly 1, the matrix is exactly symmetric, and entries are
    clipped into [-1, 1]. Constant rows raise ``ZeroVarianceError``.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 3:
        raise DimensionMismatchError("series must be R x T with T >= 3")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("series contains non-finite values")
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered**2, axis=1))
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise ZeroVarianceError(int(zero[0]))
    c = (centered @ centered.T) / np.outer(norms, norms)
    c = np.clip((c + c.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    return c


def sample_mask(r: int, q: float, rng: RngStream) -> MaskSet:
    """Uniform ROI subset of size max(1, floor(q*r)) (empty when q == 0)."""
    if not 0.0 <= q < 1.0:
        raise InvalidRatioError(f"masking ratio must be in [0, 1), got {q}")
    k = 0 if q == 0.0 else max(1, int(q * r))
    idx = rng.choice_without_replacement(r, k)
    return MaskSet(frozenset(int(i) for i in idx), q)


def apply_mask(fc: np.ndarray, mask: MaskSet) -> np.ndarray:
    """Zero the rows and columns (including diagonal entries) of masked ROIs."""
    fc = np.asarray(fc, dtype=np.float64)
    r = fc.shape[0]
    out = fc.copy()
    for i in mask.indices:
        if not 0 <= i < r:
            raise IndexOutOfRangeError(f"masked ROI {i} out of range for R={r}")
        out[i, :] = 0.0
        out[:, i] = 0.0
    return out


def mask_flat(flat: np.ndarray, mask: MaskSet, r: int) -> np.ndarray:
    """Apply an ROI mask directly to a flattened connection vector.

    Equivalent to flatten(apply_mask(unflatten(flat))) but without the matrix
    round trip; connection (i, j) is zeroed when either endpoint is masked.
    """
    iu, ju = upper_indices(r)
    idx = np.fromiter(mask.indices, dtype=np.int64, count=len(mask.indices))
    out = flat.copy()
    if idx.size:
        hit = np.isin(iu, idx) | np.isin(ju, idx)
        out[hit] = 0.0
    return out


def _nearest_psd(cov: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Eigenvalue clipping; keeps aggressive effect sizes samplable."""
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() >= floor:
        return cov
    vals = np.maximum(vals, floor)
    fixed = (vecs * vals) @ vecs.T
    return (fixed + fixed.T) / 2.0


def _subject_cholesky(cfg: SyntheticConfig, variant: tuple[tuple[int, ...], ...], stream: RngStream) -> np.ndarray:
    r = cfg.n_rois
    cov = np.eye(r)
    if cfg.background_rank > 0 and cfg.background_weight > 0.0:
        v = stream.normal(r * cfg.background_rank).reshape(r, cfg.background_rank)
        bg = v @ v.T
        d = np.sqrt(np.diag(bg))
        bg = bg / np.outer(d, d)
        cov = (1.0 - cfg.background_weight) * cov + cfg.background_weight * bg
        np.fill_diagonal(cov, 1.0)
    coupling = cfg.effect_size
    if cfg.coupling_jitter is not None and variant:
        lo, hi = cfg.coupling_jitter
        coupling = cfg.effect_size * (lo + (hi - lo) * stream.uniform())
    for group in variant:
        for a in group:
            for b in group:
                if a != b:
                    cov[a, b] = coupling
    cov = _nearest_psd(cov)
    d = np.sqrt(np.diag(cov))
    cov = cov / np.outer(d, d)
    return np.linalg.cholesky(cov)


def generate_cohort(cfg: SyntheticConfig) -> list[Subject]:
    """Seed-deterministic synthetic cohort with planted discriminative ROI groups.

    Subjects are ordered label 0 first, then label 1; each subject's
    covariance and BOLD series are drawn from its own split RNG sub-stream, so
    the result does not depend on evaluation order.
    """
    if cfg.n_per_class < 1:
        raise InvalidRatioError("n_per_class must be >= 1")
    root = RngStream(cfg.seed)
    subjects: list[Subject] = []
    counter = 0
    for label in (0, 1):
        variants = cfg.planted.get(label) or ((),)
        for k in range(cfg.n_per_class):
            variant = variants[k % len(variants)]
            stream = root.split(counter)
            chol = _subject_cholesky(cfg, variant, stream)
            z = stream.normal(cfg.n_rois * cfg.n_timepoints).reshape(cfg.n_rois, cfg.n_timepoints)
            bold = chol @ z
            subjects.append(Subject(id=f"S{counter:04d}", fc=pearson_fc(bold), label=label))
            counter += 1
    return subjects


def planted_rois(cfg: SyntheticConfig, label: int = 1) -> list[int]:
    """Union of all planted ROIs for a class, across variants and groups."""
    rois: set[int] = set()
    for variant in cfg.planted.get(label, ()):
        for group in variant:
            rois.update(group)
    return sorted(rois)


# --- dataset files ----------------------------------------------------------


def _format_float(x: float) -> str:
    return repr(float(x))


def save_dataset(subjects: list[Subject], directory) -> Path:
    """Write manifest.jsonl plus per-subject FC CSVs; returns the manifest path."""
    directory = Path(directory)
    fc_dir = directory / "fc"
    fc_dir.mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.jsonl"
    lines = []
    for s in subjects:
        rel = f"fc/{s.id}.csv"
        _write_fc_csv(directory / rel, s.fc)
        lines.append(
            json.dumps(
                {"id": s.id, "label": int(s.label), "site": s.site, "fc_path": rel},
                sort_keys=True,
            )
        )
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def _write_fc_csv(path: Path, fc: np.ndarray) -> None:
    r = fc.shape[0]
    header = ",".join(f"ROI_{i:03d}" for i in range(r))
    rows = [header]
    for i in range(r):
        rows.append(",".join(_format_float(v) for v in fc[i]))
    path.write_text("\n".join(rows) + "\n")


def _read_fc_csv(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(f"FC file not found: {path}")
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    r = len(header)
    if len(lines) - 1 != r:
        raise ParseError(f"expected {r} data rows in {path}, found {len(lines) - 1}", line=len(lines))
    out = np.empty((r, r), dtype=np.float64)
    for i, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != r:
            raise ParseError(
                f"expected {r} columns in {path}", line=i, column=len(cells)
            )
        try:
            out[i - 2] = [float(c) for c in cells]
        except ValueError as exc:
            raise ParseError(f"bad float in {path}: {exc}", line=i) from exc
    return out


def load_dataset(manifest_path) -> list[Subject]:
    """Load subjects from a manifest written by :func:`save_dataset` (exact round-trip)."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFileError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    subjects = []
    for lineno, line in enumerate(manifest_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad manifest record: {exc.msg}", line=lineno, column=exc.colno) from exc
        for key in ("id", "label", "fc_path"):
            if key not in rec:
                raise ParseError(f"manifest record missing {key!r}", line=lineno)
        fc = _read_fc_csv(base / rec["fc_path"])
        subjects.append(
            Subject(id=str(rec["id"]), fc=fc, label=int(rec["label"]), site=rec.get("site"))
        )
    if not subjects:
        raise EmptyGroupError(f"manifest {manifest_path} lists no subjects")
    return subjects


def labels_of(subjects: list[Subject]) -> np.ndarray:
    return np.array([s.label for s in subjects], dtype=np.int64)
