"""Metrics, paired testing, stratified folds, selection ratios, Ward clustering.

All functions are pure and safe to call in parallel. The positive class is
label 1 throughout (sensitivity = recall on label 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ClassTooSmallError,
    DimensionMismatchError,
    EmptyGroupError,
    NoDiscordantPairsError,
    NonFiniteError,
    SingleClassError,
    TooFewSubjectsError,
)
from .linalg import RngStream


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise DimensionMismatchError("scores and labels must have equal length")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class ConfusionReport:
    acc: float
    sen: float
    spec: float
    tp: int
    tn: int
    fp: int
    fn: int
    undefined: tuple[str, ...] = ()


def confusion_metrics(pred, labels) -> ConfusionReport:
    """Accuracy, sensitivity, specificity; zero-denominator ratios come back as NaN and are flagged."""
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.shape != labels.shape:
        raise DimensionMismatchError("predictions and labels must have equal length")
    tp = int(((pred == 1) & (labels == 1)).sum())
    tn = int(((pred == 0) & (labels == 0)).sum())
    fp = int(((pred == 1) & (labels == 0)).sum())
    fn = int(((pred == 0) & (labels == 1)).sum())
    undefined = []
    acc = (tp + tn) / pred.size if pred.size else float("nan")
    if tp + fn:
        sen = tp / (tp + fn)
    else:
        sen, undefined = float("nan"), undefined + ["sen"]
    if tn + fp:
        spec = tn / (tn + fp)
    else:
        spec, undefined = float("nan"), undefined + ["spec"]
    return ConfusionReport(acc, sen, spec, tp, tn, fp, fn, tuple(undefined))


def mcnemar(pred_a, pred_b, labels) -> tuple[float, float]:
    """Continuity-corrected McNemar statistic on discordant pairs, with its 1-dof tail probability."""
    pred_a = np.asarray(pred_a, dtype=np.int64)
    pred_b = np.asarray(pred_b, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if not (pred_a.shape == pred_b.shape == labels.shape):
        raise DimensionMismatchError("prediction vectors and labels must have equal length")
    correct_a = pred_a == labels
    correct_b = pred_b == labels
    b = int((correct_a & ~correct_b).sum())
    c = int((~correct_a & correct_b).sum())
    if b + c == 0:
        raise NoDiscordantPairsError("the two classifiers never disagree in correctness")
    chi2 = (abs(b - c) - 1) ** 2 / (b + c)
    p = math.erfc(math.sqrt(chi2 / 2.0))
    return float(chi2), float(p)


@dataclass(frozen=True)
class FoldPlan:
    """Stratified fold assignment; per-class fold sizes differ by at most one."""

    k: int
    assignments: np.ndarray  # fold index per subject
    seed: int

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.where(self.assignments == fold)[0]

    def rotations(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """(train, val, test) triples: test = fold i, val = the next fold, train = the rest."""
        out = []
        for i in range(self.k):
            test = self.fold_indices(i)
            val = self.fold_indices((i + 1) % self.k)
            train = np.where((self.assignments != i) & (self.assignments != (i + 1) % self.k))[0]
            out.append((train, val, test))
        return out


def stratified_kfold(labels, k: int, seed: int) -> FoldPlan:
    """Seeded stratified fold plan; every class must have at least k members."""
    labels = np.asarray(labels, dtype=np.int64)
    if k < 2:
        raise ClassTooSmallError("need at least two folds")
    assignments = np.full(labels.size, -1, dtype=np.int64)
    rng = RngStream(seed)
    for class_index, value in enumerate(np.unique(labels)):
        idx = np.where(labels == value)[0]
        if idx.size < k:
            raise ClassTooSmallError(f"class {value} has {idx.size} members, fewer than k={k}")
        shuffled = idx[rng.split(class_index).permutation(idx.size)]
        for pos, subject in enumerate(shuffled):
            assignments[subject] = pos % k
    return FoldPlan(k=k, assignments=assignments, seed=seed)


def selection_ratio(selections, group) -> np.ndarray:
    """Per-ROI fraction of the group's subjects whose gate selected that ROI."""
    selections = np.asarray(selections, dtype=np.float64)
    group = np.asarray(group)
    if group.dtype == bool:
        group = np.where(group)[0]
    if group.size == 0:
        raise EmptyGroupError("selection ratio over an empty group")
    return selections[group].mean(axis=0)


@dataclass(frozen=True)
class Dendrogram:
    """Agglomerative merge history: (cluster_a, cluster_b, height, merged size).

    Leaves are 0..n-1; merge i creates cluster n+i. Ward heights are
    non-decreasing.
    """

    n_leaves: int
    merges: tuple[tuple[int, int, float, int], ...]

    def heights(self) -> np.ndarray:
        return np.array([m[2] for m in self.merges])

    def cut(self, n_clusters: int | None = None, height_fraction: float | None = None) -> np.ndarray:
        """Flat labels after applying merges, stopping at a cluster count or a normalized height.

        ``height_fraction`` is relative to the final merge height; merges at or
        below the cut are applied. Labels are renumbered 0..K-1 in order of each
        cluster's smallest leaf.
        """
        if (n_clusters is None) == (height_fraction is None):
            raise DimensionMismatchError("specify exactly one of n_clusters or height_fraction")
        parent = list(range(self.n_leaves + len(self.merges)))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        if n_clusters is not None:
            if not 1 <= n_clusters <= self.n_leaves:
                raise DimensionMismatchError("cluster count out of range")
            n_merges = self.n_leaves - n_clusters
        else:
            max_h = self.merges[-1][2] if self.merges else 0.0
            cutoff = height_fraction * max_h
            n_merges = sum(1 for m in self.merges if m[2] <= cutoff)
        for i, (a, b, _h, _size) in enumerate(self.merges[:n_merges]):
            new = self.n_leaves + i
            parent[find(a)] = new
            parent[find(b)] = new
        roots = [find(i) for i in range(self.n_leaves)]
        relabel: dict[int, int] = {}
        labels = np.empty(self.n_leaves, dtype=np.int64)
        for leaf, root in enumerate(roots):
            if root not in relabel:
                relabel[root] = len(relabel)
            labels[leaf] = relabel[root]
        return labels


def ward_cluster(features) -> Dendrogram:
    """Agglomerative Ward clustering via the Lance-Williams recurrence.

    Merge height is sqrt(2 * increase in within-cluster sum of squares); for
    two singletons that is their Euclidean distance. Ties break on the
    lexicographically smallest cluster-id pair.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise TooFewSubjectsError("need at least two subjects to cluster")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("features contain non-finite values")
    n = x.shape[0]
    sq = np.sum(x**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)

    def key(i: int, j: int) -> tuple[int, int]:
        return (i, j) if i < j else (j, i)

    size = {i: 1 for i in range(n)}
    dist: dict[tuple[int, int], float] = {
        (i, j): d2[i, j] for i in range(n) for j in range(i + 1, n)
    }
    active = set(range(n))
    merges: list[tuple[int, int, float, int]] = []
    next_id = n
    while len(active) > 1:
        (a, b), d_ab = min(dist.items(), key=lambda kv: (kv[1], kv[0]))
        new_size = size[a] + size[b]
        merges.append((a, b, math.sqrt(max(d_ab, 0.0)), new_size))
        active.discard(a)
        active.discard(b)
        for other in active:
            d_ao = dist.pop(key(a, other))
            d_bo = dist.pop(key(b, other))
            total = size[a] + size[b] + size[other]
            dist[key(next_id, other)] = (
                (size[a] + size[other]) * d_ao
                + (size[b] + size[other]) * d_bo
                - size[other] * d_ab
            ) / total
        del dist[key(a, b)]
        active.add(next_id)
        size[next_id] = new_size
        next_id += 1
    return Dendrogram(n_leaves=n, merges=tuple(merges))
