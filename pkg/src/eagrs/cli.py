"""Command-line front end for the three-stage pipeline.

Commands: ``synth`` (write a synthetic cohort), ``pretrain`` (stage 1,
optionally sweeping the masking ratio), ``relevance`` (stage 2, cacheable),
``train`` (stage 3 under k-fold rotation, with ablation switches), and
``analyze`` (selection ratios, bands, subtype clustering).

Every command resolves one run directory (``--run`` under the
``EAGRS_RUN_ROOT`` root, default ``./runs``), stores its effective canonical
config there, and writes only deterministic artifacts: rerunning a command
from its stored config reproduces every file byte for byte, independent of
``--workers``.

Exit codes: 2 config error, 3 training divergence, 4 checkpoint/dataset
mismatch, 5 missing artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import evaluation, fcdata, lrp, roiselect, sae
from .errors import DivergedError, EagrsError, MissingFileError
from .linalg import RngStream, flatten_upper, upper_size
from .nn import DenseLayer

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4
EXIT_MISSING = 5

ABLATION_CASES = ("full", "I", "II", "III", "IV", "V", "VI")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """Canonical, JSON-serializable description of one experiment."""

    seed: int = 7
    dataset_path: str | None = None
    synthetic: dict | None = None
    q: float = 0.1
    alpha: float = 0.5
    arch_scale: float = 1.0
    sae_dims: list[int] | None = None
    pretrain_lr: float = 1e-3
    pretrain_epochs: int = 150
    batch_size: int = 50
    weight_decay: float = 5e-5
    rule_eps: float = 1e-6
    mean_axis: int = 2
    tau: float = 0.01
    train_lr: float = 3e-4
    train_epochs: int = 300
    eval_every: int = 10
    standardize_feats: bool = True
    folds: int = 5
    ablation: str = "full"
    workers: int = 1

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise CliError(EXIT_CONFIG, f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def validate(self) -> None:
        if (self.dataset_path is None) == (self.synthetic is None):
            raise CliError(
                EXIT_CONFIG, "config must set exactly one of 'dataset_path' or 'synthetic'"
            )
        if not 0.0 <= self.q < 1.0:
            raise CliError(EXIT_CONFIG, f"config field 'q' must be in [0, 1), got {self.q}")
        if not 0.0 <= self.alpha <= 1.0:
            raise CliError(EXIT_CONFIG, f"config field 'alpha' must be in [0, 1], got {self.alpha}")
        if self.ablation not in ABLATION_CASES:
            raise CliError(EXIT_CONFIG, f"config field 'ablation' must be one of {ABLATION_CASES}")
        if self.tau <= 0:
            raise CliError(EXIT_CONFIG, f"config field 'tau' must be positive, got {self.tau}")
        if self.mean_axis not in (1, 2):
            raise CliError(EXIT_CONFIG, "config field 'mean_axis' must be 1 or 2")
        if self.workers < 1:
            raise CliError(EXIT_CONFIG, "config field 'workers' must be >= 1")


def resolve_run_dir(run: str) -> Path:
    p = Path(run)
    if p.is_absolute() or run.startswith(".") or os.sep in run:
        return p
    root = Path(os.environ.get("EAGRS_RUN_ROOT", "runs"))
    return root / run


def ensure_run_layout(run_dir: Path) -> None:
    for sub in ("checkpoints", "relevance", "reports", "logs"):
        (run_dir / sub).mkdir(parents=True, exist_ok=True)


def load_config(args) -> RunConfig:
    """Config file (explicit or stored in the run dir) merged with CLI overrides."""
    base: dict = {}
    run_dir = resolve_run_dir(args.run)
    config_path = getattr(args, "config", None)
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise CliError(EXIT_CONFIG, f"config file not found: {path}")
        base = json.loads(path.read_text())
    elif (run_dir / "config.json").exists():
        base = json.loads((run_dir / "config.json").read_text())
    cfg = RunConfig.from_dict(base)
    for name in (
        "seed",
        "q",
        "alpha",
        "tau",
        "folds",
        "ablation",
        "workers",
        "dataset_path",
        "pretrain_epochs",
        "train_epochs",
        "pretrain_lr",
        "train_lr",
        "arch_scale",
    ):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "synthetic", None):
        cfg.synthetic = json.loads(args.synthetic)
        cfg.dataset_path = None
    return cfg


def store_config(cfg: RunConfig, run_dir: Path) -> None:
    ensure_run_layout(run_dir)
    (run_dir / "config.json").write_text(cfg.canonical_json())


# --- dataset resolution -----------------------------------------------------


def default_planted(r: int, count: int = 4) -> list[int]:
    """Evenly spaced ROI indices used when a synthetic spec does not name its plant."""
    return [int(round(r * (i + 0.5) / count)) % r for i in range(count)]


def _normalize_variant(variant) -> tuple[tuple[int, ...], ...]:
    """A variant is either one flat ROI list (one group) or a list of groups."""
    if not variant:
        return ()
    if all(isinstance(x, (int, float)) for x in variant):
        return (tuple(int(x) for x in variant),)
    return tuple(tuple(int(x) for x in group) for group in variant)


def synthetic_config(spec: dict, fallback_seed: int) -> fcdata.SyntheticConfig:
    try:
        r = int(spec["n_rois"])
        n_per_class = int(spec["n_per_class"])
        t = int(spec["n_timepoints"])
        effect = float(spec.get("effect_size", 0.6))
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, f"synthetic spec missing field {exc.args[0]!r}") from exc
    planted_raw = spec.get("planted")
    if planted_raw is None:
        planted_raw = {"1": [default_planted(r)]}
    planted: dict[int, tuple[tuple[tuple[int, ...], ...], ...]] = {}
    for label, variants in planted_raw.items():
        planted[int(label)] = tuple(_normalize_variant(v) for v in variants)
    jitter = spec.get("coupling_jitter")
    return fcdata.SyntheticConfig(
        n_rois=r,
        n_per_class=n_per_class,
        n_timepoints=t,
        effect_size=effect,
        seed=int(spec.get("seed", fallback_seed)),
        planted=planted,
        coupling_jitter=None if jitter is None else (float(jitter[0]), float(jitter[1])),
        background_rank=int(spec.get("background_rank", 0)),
        background_weight=float(spec.get("background_weight", 0.0)),
    )


def resolve_subjects(cfg: RunConfig) -> list[fcdata.Subject]:
    if cfg.dataset_path is not None:
        manifest = Path(cfg.dataset_path)
        if manifest.is_dir():
            manifest = manifest / "manifest.jsonl"
        try:
            return fcdata.load_dataset(manifest)
        except MissingFileError as exc:
            raise CliError(EXIT_CONFIG, f"config field 'dataset_path': {exc}") from exc
    return fcdata.generate_cohort(synthetic_config(cfg.synthetic, cfg.seed))


def flats_of(subjects: list[fcdata.Subject]) -> np.ndarray:
    return np.stack([flatten_upper(s.fc) for s in subjects])


# --- small CSV helpers (repr floats round-trip exactly) ----------------------


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise CliError(EXIT_MISSING, f"missing artifact: {path}")
    lines = path.read_text().strip().split("\n")
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


# --- pretrain ----------------------------------------------------------------


def build_sae(cfg: RunConfig, d: int) -> sae.SAEModel:
    dims = cfg.sae_dims or sae.default_hidden_dims(d, cfg.arch_scale)
    return sae.SAEModel([d] + list(dims), RngStream(cfg.seed).split(100))


def step1_config(cfg: RunConfig, q: float | None = None) -> sae.Step1Config:
    return sae.Step1Config(
        q=cfg.q if q is None else q,
        alpha=cfg.alpha,
        lr=cfg.pretrain_lr,
        batch_size=cfg.batch_size,
        epochs=cfg.pretrain_epochs,
        weight_decay=cfg.weight_decay,
        seed=cfg.seed,
    )


def masked_reconstruction_mse(
    model: sae.SAEModel, flats: np.ndarray, r: int, q_eval: float, seed: int
) -> tuple[float, float]:
    """Masked-entry MSE of the model against the zero-imputation baseline."""
    rng = RngStream(seed)
    err_model = 0.0
    err_zero = 0.0
    total = 0
    for flat in flats:
        mask = fcdata.sample_mask(r, q_eval, rng)
        masked = fcdata.mask_flat(flat, mask, r)
        recon = model.reconstruct(masked)
        hit = _mask_hits(mask, r)
        err_model += float(np.sum((recon[hit] - flat[hit]) ** 2))
        err_zero += float(np.sum(flat[hit] ** 2))
        total += int(hit.sum())
    if total == 0:
        return float("nan"), float("nan")
    return err_model / total, err_zero / total


def _mask_hits(mask: fcdata.MaskSet, r: int) -> np.ndarray:
    from .linalg import upper_indices

    iu, ju = upper_indices(r)
    idx = np.fromiter(mask.indices, dtype=np.int64, count=len(mask.indices))
    if not idx.size:
        return np.zeros(iu.size, dtype=bool)
    return np.isin(iu, idx) | np.isin(ju, idx)


def _pretrain_once(cfg: RunConfig, flats: np.ndarray, q: float) -> tuple[sae.SAEModel, list[dict]]:
    model = build_sae(cfg, flats.shape[1])
    step_cfg = step1_config(cfg, q=q)
    log = sae.pretrain(model, flats, step_cfg)
    return model, log


def cmd_pretrain(cfg: RunConfig, run_dir: Path, sweep: list[float] | None = None) -> None:
    cfg.validate()
    subjects = resolve_subjects(cfg)
    flats = flats_of(subjects)
    r = subjects[0].fc.shape[0]
    store_config(cfg, run_dir)
    qs = sweep if sweep is not None else [cfg.q]
    log_rows: list[list] = []
    sweep_rows: list[list] = []
    for q in qs:
        model, log = _pretrain_once(cfg, flats, q)
        name = "sae.eagm" if sweep is None else f"sae_q{q:.1f}.eagm"
        sae.save_checkpoint(model, run_dir / "checkpoints" / name)
        for row in log:
            log_rows.append([f"{q:.1f}", row["layer"], row["epoch"], row["rec_loss_x"], row["rec_loss_h"]])
        if sweep is not None:
            for q_eval in qs:
                if q_eval == 0.0:
                    continue
                mse_model, mse_zero = masked_reconstruction_mse(model, flats, r, q_eval, cfg.seed + 1)
                sweep_rows.append([f"{q:.1f}", f"{q_eval:.1f}", mse_model, mse_zero])
    write_csv(
        run_dir / "logs" / "pretrain_log.csv",
        ["q", "layer", "epoch", "rec_loss_x", "rec_loss_h"],
        log_rows,
    )
    if sweep is not None:
        write_csv(
            run_dir / "reports" / "sweep_summary.csv",
            ["q_pretrain", "q_eval", "masked_mse_model", "masked_mse_zero"],
            sweep_rows,
        )


# --- relevance ----------------------------------------------------------------


def _relevance_chunk(model: sae.SAEModel, fcs: list[np.ndarray], rule: lrp.RelevanceRule) -> list[np.ndarray]:
    return [lrp.global_relevance(model, fc, rule) for fc in fcs]


def compute_relevance_tensors(
    model: sae.SAEModel, subjects: list[fcdata.Subject], rule: lrp.RelevanceRule, workers: int = 1
) -> np.ndarray:
    """Per-subject relevance tensors, worker-count invariant (each worker owns a model clone)."""
    if workers <= 1:
        out = _relevance_chunk(model, [s.fc for s in subjects], rule)
        return np.stack(out)
    chunks = np.array_split(np.arange(len(subjects)), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_relevance_chunk, model.clone(), [subjects[i].fc for i in chunk], rule)
            for chunk in chunks
            if chunk.size
        ]
        parts = [f.result() for f in futures]
    return np.stack([t for part in parts for t in part])


def cmd_relevance(cfg: RunConfig, run_dir: Path) -> None:
    cfg.validate()
    subjects = resolve_subjects(cfg)
    r = subjects[0].fc.shape[0]
    ckpt_path = run_dir / "checkpoints" / "sae.eagm"
    if not ckpt_path.exists():
        raise CliError(EXIT_MISSING, f"missing artifact: {ckpt_path} (run pretrain first)")
    model = sae.load_checkpoint(ckpt_path)
    if model.input_dim != upper_size(r):
        raise CliError(
            EXIT_CHECKPOINT,
            f"checkpoint expects D={model.input_dim} but dataset has R={r} (D={upper_size(r)})",
        )
    store_config(cfg, run_dir)
    rule = lrp.RelevanceRule("epsilon", cfg.rule_eps) if cfg.rule_eps > 0 else lrp.ZERO_RULE
    tensors = compute_relevance_tensors(model, subjects, rule, cfg.workers)
    lrp.save_relevance_tensors(run_dir / "relevance" / "tensors.eagr", tensors)

    rep_rows = []
    mean_rows = []
    for subject, tensor in zip(subjects, tensors):
        rep = roiselect.representative_vectors(tensor.astype(np.float64), cfg.mean_axis)
        rep_rows.append([subject.id] + list(rep.f_v) + list(rep.f_c))
        mean_rows.append(
            [subject.id] + list(lrp.mean_relevance(tensor.astype(np.float64), cfg.mean_axis).ravel())
        )
    rep_header = (
        ["id"] + [f"fv_{i:03d}" for i in range(r)] + [f"fc_{i:03d}" for i in range(r)]
    )
    write_csv(run_dir / "relevance" / "repvectors.csv", rep_header, rep_rows)
    mean_header = ["id"] + [f"m_{i:03d}_{j:03d}" for i in range(r) for j in range(r)]
    write_csv(run_dir / "relevance" / "mean_maps.csv", mean_header, mean_rows)


def load_repvectors(run_dir: Path, r: int) -> tuple[list[str], np.ndarray]:
    header, rows = read_csv(run_dir / "relevance" / "repvectors.csv")
    if len(header) != 1 + 2 * r:
        raise CliError(EXIT_CHECKPOINT, "repvector cache does not match the dataset ROI count")
    ids = [row[0] for row in rows]
    values = np.array([[float(v) for v in row[1:]] for row in rows])
    feats = np.stack([values[:, :r], values[:, r:]], axis=2)
    return ids, feats


# --- train ---------------------------------------------------------------------


def _fold_model(cfg: RunConfig, ckpt: sae.SAEModel, r: int, fold: int, channels: int) -> roiselect.Step3Model:
    rng = RngStream(cfg.seed).split(200 + fold)
    encoder = [DenseLayer(e.w.copy(), None, e.activation) for e in ckpt.encoders]
    psi = None
    if cfg.ablation in ("full", "V", "VI"):
        hidden = roiselect.psi_hidden_dims(r, cfg.arch_scale)
        psi = roiselect.PsiNetwork(r, rng.split(0), channels=channels, tau=cfg.tau, hidden=hidden)
    clf_in = encoder[-1].out_dim + (2 * r if cfg.ablation == "IV" else 0)
    clf = roiselect.make_classifier(clf_in, rng.split(1))
    return roiselect.Step3Model(encoder, psi, clf, r, ablation=cfg.ablation)


def cmd_train(cfg: RunConfig, run_dir: Path, mcnemar_vs: str | None = None) -> None:
    cfg.validate()
    subjects = resolve_subjects(cfg)
    labels = fcdata.labels_of(subjects)
    flats = flats_of(subjects)
    r = subjects[0].fc.shape[0]

    ckpt_path = run_dir / "checkpoints" / "sae.eagm"
    needs_encoder = cfg.ablation not in ("II", "III")
    needs_feats = cfg.ablation != "I"
    ckpt = None
    if needs_encoder:
        if not ckpt_path.exists():
            raise CliError(EXIT_MISSING, f"missing artifact: {ckpt_path} (run pretrain first)")
        ckpt = sae.load_checkpoint(ckpt_path)
        if ckpt.input_dim != flats.shape[1]:
            raise CliError(EXIT_CHECKPOINT, "checkpoint does not match the dataset ROI count")
    feats = None
    if needs_feats:
        ids, feats = load_repvectors(run_dir, r)
        if ids != [s.id for s in subjects]:
            raise CliError(EXIT_CHECKPOINT, "repvector cache does not list the dataset subjects")
    store_config(cfg, run_dir)

    channels = 1 if cfg.ablation in ("V", "VI") else 2
    if feats is not None and cfg.ablation == "V":
        feats_used = feats[:, :, :1]
    elif feats is not None and cfg.ablation == "VI":
        feats_used = feats[:, :, 1:]
    else:
        feats_used = feats

    plan = evaluation.stratified_kfold(labels, cfg.folds, cfg.seed)
    fold_rows: list[list] = []
    log_rows: list[list] = []
    preds = np.full(labels.size, -1, dtype=np.int64)
    scores = np.full(labels.size, np.nan)
    selections = np.zeros((labels.size, r))
    for fold, (train_idx, val_idx, test_idx) in enumerate(plan.rotations()):
        if cfg.ablation in ("II", "III"):
            column = 0 if cfg.ablation == "II" else 1
            features = feats[:, :, column]
            clfm = roiselect.fit_margin_classifier(features[train_idx], labels[train_idx])
            fold_scores = clfm.scores(features[test_idx])
            fold_preds = clfm.predict(features[test_idx])
            selections[test_idx] = 1.0
        else:
            fold_feats = feats_used
            if cfg.standardize_feats and feats_used is not None:
                # per-ROI, per-channel standardization from training-fold statistics
                mu = feats_used[train_idx].mean(axis=0)
                sd = feats_used[train_idx].std(axis=0)
                sd = np.where(sd == 0.0, 1.0, sd)
                fold_feats = (feats_used - mu) / sd
            model = _fold_model(cfg, ckpt, r, fold, channels)
            step_cfg = roiselect.Step3Config(
                lr=cfg.train_lr,
                epochs=cfg.train_epochs,
                batch_size=cfg.batch_size,
                weight_decay=cfg.weight_decay,
                tau=cfg.tau,
                seed=cfg.seed * 1000 + fold,
                eval_every=cfg.eval_every,
            )
            try:
                result = roiselect.train_step3(
                    model, flats, fold_feats, labels, step_cfg, train_idx, val_idx
                )
            except DivergedError as exc:
                raise CliError(EXIT_DIVERGED, str(exc)) from exc
            for row in result.history:
                log_rows.append([fold, row["epoch"], row["train_loss"], row.get("val_auc", float("nan"))])
            test_feats = None if fold_feats is None else fold_feats[test_idx]
            probs = model.forward(flats[test_idx], test_feats, hard=True)
            fold_scores = probs[:, 1]
            fold_preds = np.argmax(probs, axis=1)
            selections[test_idx] = model.gate_vectors(test_feats, test_idx.size, hard=True)
        preds[test_idx] = fold_preds
        scores[test_idx] = fold_scores
        auc = evaluation.roc_auc(fold_scores, labels[test_idx])
        rep = evaluation.confusion_metrics(fold_preds, labels[test_idx])
        fold_rows.append([fold, auc, rep.acc, rep.sen, rep.spec])

    values = np.array([[float(v) for v in row[1:]] for row in fold_rows])
    fold_rows.append(["mean"] + list(values.mean(axis=0)))
    fold_rows.append(["std"] + list(values.std(axis=0)))
    write_csv(run_dir / "reports" / "metrics.csv", ["fold", "auc", "acc", "sen", "spec"], fold_rows)
    write_csv(
        run_dir / "logs" / "train_log.csv",
        ["fold", "epoch", "train_loss", "val_auc"],
        log_rows,
    )
    sel_header = ["id", "label", "pred"] + [f"sel_{i:03d}" for i in range(r)]
    sel_rows = [
        [subjects[i].id, int(labels[i]), int(preds[i])] + [int(v) for v in selections[i]]
        for i in range(labels.size)
    ]
    write_csv(run_dir / "reports" / "selections.csv", sel_header, sel_rows)

    if mcnemar_vs is not None:
        other_dir = resolve_run_dir(mcnemar_vs)
        other_ids, other_preds, _labels, _sel = load_selections(other_dir)
        if other_ids != [s.id for s in subjects]:
            raise CliError(EXIT_CHECKPOINT, "baseline run lists different subjects")
        chi2, p = evaluation.mcnemar(preds, other_preds, labels)
        b = int(((preds == labels) & (other_preds != labels)).sum())
        c = int(((preds != labels) & (other_preds == labels)).sum())
        write_csv(
            run_dir / "reports" / "mcnemar.csv",
            ["baseline", "b", "c", "chi2", "p"],
            [[mcnemar_vs, b, c, chi2, p]],
        )


def load_selections(run_dir: Path) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    header, rows = read_csv(run_dir / "reports" / "selections.csv")
    ids = [row[0] for row in rows]
    labels = np.array([int(row[1]) for row in rows])
    preds = np.array([int(row[2]) for row in rows])
    sel = np.array([[float(v) for v in row[3:]] for row in rows])
    return ids, preds, labels, sel


# --- analyze --------------------------------------------------------------------


def sr_bands(sr: np.ndarray) -> dict[str, list[int]]:
    """Partition ROIs with SR > 0.5 into the mid (0.5-0.75] and high (> 0.75) bands."""
    mid = [int(i) for i in np.where((sr > 0.5) & (sr <= 0.75))[0]]
    high = [int(i) for i in np.where(sr > 0.75)[0]]
    return {"mid": mid, "high": high}


def cmd_analyze(run_dir: Path, cut: float = 0.3, n_clusters: int | None = None) -> None:
    ids, preds, labels, selections = load_selections(run_dir)
    r = selections.shape[1]
    groups = {"td": np.where(labels == 0)[0], "asd": np.where(labels == 1)[0]}
    sr = {name: evaluation.selection_ratio(selections, idx) for name, idx in groups.items()}
    write_csv(
        run_dir / "reports" / "selection_ratio.csv",
        ["roi", "sr_td", "sr_asd"],
        [[i, sr["td"][i], sr["asd"][i]] for i in range(r)],
    )
    band_rows = []
    for name in ("td", "asd"):
        bands = sr_bands(sr[name])
        for band_name, rois in bands.items():
            for roi in rois:
                band_rows.append([name, band_name, roi, sr[name][roi]])
    write_csv(run_dir / "reports" / "sr_bands.csv", ["group", "band", "roi", "sr"], band_rows)

    asd_idx = groups["asd"]
    if asd_idx.size >= 2:
        dendro = evaluation.ward_cluster(selections[asd_idx])
        if n_clusters is not None:
            cluster_labels = dendro.cut(n_clusters=n_clusters)
        else:
            cluster_labels = dendro.cut(height_fraction=cut)
        payload = {
            "leaves": int(dendro.n_leaves),
            "merges": [[int(a), int(b), float(h), int(s)] for a, b, h, s in dendro.merges],
            "cut": {"height_fraction": cut} if n_clusters is None else {"n_clusters": n_clusters},
            "labels": [int(v) for v in cluster_labels],
        }
        (run_dir / "reports" / "dendrogram.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n"
        )
        write_csv(
            run_dir / "reports" / "subtypes.csv",
            ["id", "cluster"],
            [[ids[i], int(cluster_labels[k])] for k, i in enumerate(asd_idx)],
        )
        n_found = len(set(int(v) for v in cluster_labels))
    else:
        n_found = 0

    lines = ["group band rois"]
    for name in ("td", "asd"):
        bands = sr_bands(sr[name])
        lines.append(f"{name} 0.5<SR<=0.75 {bands['mid']}")
        lines.append(f"{name} SR>0.75 {bands['high']}")
    lines.append(f"asd subtype clusters at cut: {n_found}")
    print("\n".join(lines))


# --- synth ----------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, out: Path) -> None:
    if cfg.synthetic is None:
        raise CliError(EXIT_CONFIG, "config field 'synthetic' is required for synth")
    subjects = fcdata.generate_cohort(synthetic_config(cfg.synthetic, cfg.seed))
    manifest = fcdata.save_dataset(subjects, out)
    print(f"wrote {len(subjects)} subjects to {manifest}")


# --- argument parsing -------------------------------------------------------------


def parse_sweep(text: str) -> list[float]:
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"--sweep-q expects a:b:step, got {text!r}") from exc
    if step <= 0 or hi < lo:
        raise CliError(EXIT_CONFIG, f"--sweep-q bounds invalid: {text!r}")
    out = []
    q = lo
    while q <= hi + 1e-9:
        out.append(round(q, 10))
        q += step
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eagrs", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--run", required=True, help="run directory name or path")
        p.add_argument("--config", help="config JSON to load as base")
        p.add_argument("--seed", type=int)
        p.add_argument("--q", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--tau", type=float)
        p.add_argument("--folds", type=int)
        p.add_argument("--ablation", choices=ABLATION_CASES)
        p.add_argument("--workers", type=int)
        p.add_argument("--dataset-path", dest="dataset_path")
        p.add_argument("--synthetic", help="inline synthetic spec as JSON")
        p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
        p.add_argument("--train-epochs", dest="train_epochs", type=int)
        p.add_argument("--pretrain-lr", dest="pretrain_lr", type=float)
        p.add_argument("--train-lr", dest="train_lr", type=float)
        p.add_argument("--arch-scale", dest="arch_scale", type=float)

    p = sub.add_parser("synth", help="generate a synthetic cohort dataset")
    add_common(p)
    p.add_argument("--out", required=True, help="dataset output directory")

    p = sub.add_parser("pretrain", help="stage 1: masked-reconstruction pretraining")
    add_common(p)
    p.add_argument("--sweep-q", dest="sweep_q", help="sweep masking ratios a:b:step")

    p = sub.add_parser("relevance", help="stage 2: relevance tensors and ROI vectors")
    add_common(p)

    p = sub.add_parser("train", help="stage 3: k-fold gated classification")
    add_common(p)
    p.add_argument("--mcnemar-vs", dest="mcnemar_vs", help="baseline run for McNemar's test")

    p = sub.add_parser("analyze", help="selection ratios, bands, and subtype clustering")
    p.add_argument("--run", required=True)
    p.add_argument("--cut", type=float, default=0.3, help="normalized dendrogram cut height")
    p.add_argument("--clusters", type=int, help="override: cut at a fixed cluster count")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run_dir = resolve_run_dir(args.run)
        if args.command == "analyze":
            cmd_analyze(run_dir, cut=args.cut, n_clusters=args.clusters)
            return 0
        cfg = load_config(args)
        if args.command == "synth":
            cmd_synth(cfg, Path(args.out))
        elif args.command == "pretrain":
            sweep = parse_sweep(args.sweep_q) if args.sweep_q else None
            cmd_pretrain(cfg, run_dir, sweep=sweep)
        elif args.command == "relevance":
            cmd_relevance(cfg, run_dir)
        elif args.command == "train":
            cmd_train(cfg, run_dir, mcnemar_vs=args.mcnemar_vs)
        return 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MissingFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except EagrsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
