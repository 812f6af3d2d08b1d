"""Imbalance-aware evaluation: stratified CV, AUROC, AUPRC, swept accuracy.

AUPRC is computed as average precision (step-wise integration of the
precision-recall curve) rather than trapezoidal interpolation, which is known
to overstate PR area.  Tied scores are processed as one block, so the
all-ties scorer gets exactly the positive base rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import stream


class MetricError(ValueError):
    """Raised when a metric is undefined for the given labels."""


N_ACCURACY_THRESHOLDS = 200


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be 1-d arrays of equal length")
    return s, y


def auroc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative.

    Rank (concordance) formulation; ties count half.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auroc needs both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=float)
    sorted_s = s[order]
    # average ranks over tie groups (1-based ranks)
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision with tied scores processed as a block."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("auprc needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    ap = 0.0
    tp = 0
    seen = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j + 1 < n and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        block_pos = int(y_sorted[i : j + 1].sum())
        tp += block_pos
        seen = j + 1
        if block_pos:
            precision = tp / seen
            ap += precision * (block_pos / n_pos)
        i = j + 1
    return float(ap)


def best_threshold_accuracy(scores, labels,
                            n_thresholds: int = N_ACCURACY_THRESHOLDS) -> tuple[float, float]:
    """Best accuracy over ``n_thresholds`` equally spaced thresholds in [0, 1].

    A row is predicted positive when its score is strictly above the
    threshold, so the all-negative classifier is always in the sweep at
    threshold 1.  Returns (accuracy, smallest threshold achieving it).
    """
    s, y = _as_arrays(scores, labels)
    if len(s) == 0:
        raise MetricError("empty scores")
    thresholds = np.linspace(0.0, 1.0, n_thresholds)
    pred = s[None, :] > thresholds[:, None]
    acc = (pred == (y[None, :] == 1)).mean(axis=1)
    best = int(np.argmax(acc))
    return float(acc[best]), float(thresholds[best])


def split_cv(n_rows: int, labels, k: int = 3, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold split; returns k (train_idx, test_idx) pairs.

    Each class's (shuffled) indices are dealt round-robin, so per-fold class
    counts differ from exact proportionality by at most one sample.
    """
    y = np.asarray(labels).astype(int)
    if len(y) != n_rows:
        raise MetricError("labels length must match n_rows")
    rng = stream(seed, "cv")
    fold_of = np.empty(n_rows, dtype=int)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise MetricError(f"class {cls} has fewer than k={k} members")
        idx = rng.permutation(idx)
        fold_of[idx] = np.arange(len(idx)) % k
    splits = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        splits.append((train, test))
    return splits


@dataclass
class MetricReport:
    """Per-cell metrics with aggregates, for one (family, prediction span)."""

    family: str
    span: int
    cells: list[dict] = field(default_factory=list)  # imputation, fold, auprc, auroc, best_accuracy, base_rate

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def _values(self, metric: str) -> np.ndarray:
        return np.array([c[metric] for c in self.cells], dtype=float)

    def mean(self, metric: str) -> float:
        return float(self._values(metric).mean())

    def sd(self, metric: str) -> float:
        return float(self._values(metric).std())

    @property
    def base_rate(self) -> float:
        return self.mean("base_rate")

    def baselines(self) -> dict[str, float]:
        r = self.base_rate
        return {"auprc": r, "auroc": 0.5, "accuracy": 1.0 - r}

    def summary(self) -> dict:
        out = {"family": self.family, "span": self.span, "n_cells": self.n_cells}
        for m in ("auprc", "auroc", "best_accuracy"):
            out[f"{m}_mean"] = self.mean(m)
            out[f"{m}_sd"] = self.sd(m)
        out["base_rate"] = self.base_rate
        out["baselines"] = self.baselines()
        return out


def aggregate_runs(family: str, span: int, cells: list[dict]) -> MetricReport:
    """Pool per-(imputation, fold) metric cells into one report."""
    if not cells:
        raise MetricError("aggregate_runs needs at least one cell")
    return MetricReport(family=family, span=span, cells=list(cells))


def score_cell(scores, labels, imputation: int, fold: int,
               n_thresholds: int = N_ACCURACY_THRESHOLDS) -> dict:
    """All three metrics plus the base rate for one evaluation cell."""
    s, y = _as_arrays(scores, labels)
    acc, thr = best_threshold_accuracy(s, y, n_thresholds)
    return {
        "imputation": imputation,
        "fold": fold,
        "auprc": auprc(s, y),
        "auroc": auroc(s, y),
        "best_accuracy": acc,
        "best_threshold": thr,
        "base_rate": float(y.mean()),
    }
