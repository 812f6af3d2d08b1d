"""Collinearity screening (VIF) and permutation feature importance.

PFI permutes all encoded columns of one predictor jointly with a single
shared row permutation per repeat, so multi-column encodings (one-hot
blocks) move as a unit and never get scrambled against themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .evaluation import auprc, auroc

VIF_THRESHOLD = 5.0
_R2_INFINITE = 1.0 - 1e-8


class ImportanceError(ValueError):
    pass


def _first_principal_component(block: np.ndarray) -> np.ndarray:
    centered = block - block.mean(axis=0)
    if centered.shape[1] == 1:
        return centered[:, 0]
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[0]


def compute_vif(X: np.ndarray, column_groups: dict[str, list[int]]) -> dict[str, float]:
    """Variance inflation factor per predictor on an encoded numeric design.

    Multi-column predictors are summarized by their first principal
    component before being regressed on every other predictor's columns.
    """
    X = np.asarray(X, dtype=float)
    names = list(column_groups)
    if len(names) < 2:
        raise ImportanceError("VIF needs at least two predictors")
    if X.shape[0] <= X.shape[1]:
        raise ImportanceError("VIF needs more rows than encoded columns")
    out: dict[str, float] = {}
    for name in names:
        own = column_groups[name]
        target = _first_principal_component(X[:, own])
        ss_tot = float(((target - target.mean()) ** 2).sum())
        if ss_tot < 1e-12:
            out[name] = float("inf")      # constant predictor, flagged not fatal
            continue
        other_cols = [c for k in names if k != name for c in column_groups[k]]
        design = np.column_stack([X[:, other_cols], np.ones(len(X))])
        coef, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
        resid = target - design @ coef
        r2 = 1.0 - float((resid**2).sum()) / ss_tot
        out[name] = float("inf") if r2 >= _R2_INFINITE else 1.0 / (1.0 - r2)
    return out


def vif_screen(X: np.ndarray, column_groups: dict[str, list[int]],
               threshold: float = VIF_THRESHOLD) -> tuple[set[str], dict[str, float]]:
    """Predictors whose VIF exceeds the threshold, plus all VIF values."""
    vifs = compute_vif(X, column_groups)
    return {k for k, v in vifs.items() if v > threshold}, vifs


def _draw_permutation(seed: int | tuple, predictor_index: int, repeat: int,
                      n: int) -> np.ndarray:
    return stream(0, seed, "pfi", predictor_index, repeat).permutation(n)


def permutation_importance(model, X: np.ndarray, labels: np.ndarray,
                           column_groups: dict[str, list[int]], metric: str = "auprc",
                           n_repeats: int = 5, seed: int | tuple = 0) -> dict[str, dict]:
    """Per-predictor drop in the test metric when its columns are permuted.

    Returns {predictor: {"mean": drop, "sd": sd, "repeats": [...]}}; negative
    drops are reported as-is.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels).astype(int)
    metric_fn = {"auprc": auprc, "auroc": auroc}[metric]
    baseline = metric_fn(model.predict_proba(X), y)
    n = len(X)
    results: dict[str, dict] = {}
    for p_idx, (name, cols) in enumerate(column_groups.items()):
        if not cols:
            raise ImportanceError(f"predictor {name!r} has an empty column group")
        work = X.copy()
        drops = []
        for rep in range(n_repeats):
            perm = _draw_permutation(seed, p_idx, rep, n)
            work[:, cols] = X[perm][:, cols]
            drops.append(baseline - metric_fn(model.predict_proba(work), y))
            work[:, cols] = X[:, cols]
        drops = np.array(drops)
        results[name] = {
            "mean": float(drops.mean()),
            "sd": float(drops.std()),
            "repeats": drops.tolist(),
            "baseline": float(baseline),
        }
    return results


@dataclass
class ImportanceReport:
    """Pooled PFI scores plus the predictors excluded by the VIF screen."""

    metric: str
    span: int
    group: str = "all"
    scores: dict[str, dict] = field(default_factory=dict)     # predictor -> mean/sd/n
    excluded: dict[str, float] = field(default_factory=dict)  # predictor -> VIF
    vif: dict[str, float] = field(default_factory=dict)

    def ranking(self) -> list[tuple[str, float]]:
        return sorted(
            ((k, v["mean"]) for k, v in self.scores.items()),
            key=lambda kv: -kv[1],
        )

    def argmax(self) -> str:
        return self.ranking()[0][0]


def pool_importance(metric: str, span: int, per_cell: list[dict[str, dict]],
                    excluded: dict[str, float], vif: dict[str, float],
                    group: str = "all") -> ImportanceReport:
    """Pool per-(imputation, fold) PFI repeats into one report."""
    scores: dict[str, dict] = {}
    names = per_cell[0].keys() if per_cell else []
    for name in names:
        reps = np.concatenate([np.asarray(cell[name]["repeats"]) for cell in per_cell])
        scores[name] = {"mean": float(reps.mean()), "sd": float(reps.std()), "n": len(reps)}
    return ImportanceReport(metric=metric, span=span, group=group, scores=scores,
                            excluded=dict(excluded), vif=dict(vif))
