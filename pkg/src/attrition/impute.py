"""Multiple imputation by chained equations with random-forest base imputers.

Each of the m chains starts from random draws out of the observed training
marginals and then sweeps the incomplete columns a fixed number of times,
re-imputing each from a forest trained on the other columns' current values.
Forests only ever see training rows, so test rows stay unseen by every
fitted statistic.  Numeric imputations add residual-scaled noise and
categorical imputations sample from the predicted class distribution, which
keeps the chains distinct.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from .features import CATEGORICAL, NUMERIC, FeatureMatrix
from .models.forest import RegressionForest


class UnimputableColumnError(ValueError):
    pass


def _default_rf_params() -> dict:
    return {"n_trees": 100, "mtry": None, "min_leaf": 5}


@dataclass
class ImputationConfig:
    m: int = 10
    n_iterations: int = 5
    rf_params: dict = field(default_factory=_default_rf_params)
    seed: int = 0

    def validate(self) -> None:
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")


def impute_chained(matrix: FeatureMatrix, config: ImputationConfig,
                   train_rows: np.ndarray | None = None) -> list[FeatureMatrix]:
    """Produce m completed copies of the matrix.

    ``train_rows`` restricts every fitted forest (and the initialization
    marginals) to those rows; missing cells of all rows are imputed.
    """
    config.validate()
    mask = matrix.missing_mask
    if not mask.any():
        return [matrix.copy() for _ in range(config.m)]

    n, p = matrix.values.shape
    train = np.arange(n) if train_rows is None else np.asarray(train_rows)
    incomplete = [j for j in range(p) if mask[:, j].any()]
    for j in incomplete:
        if not (~mask[train, j]).any():
            raise UnimputableColumnError(
                f"column {matrix.predictors[j].name!r} has no observed training values"
            )

    is_cat = np.array([pr.kind != NUMERIC for pr in matrix.predictors])
    n_levels = np.array(
        [len(pr.levels) + 1 if pr.kind == CATEGORICAL else (2 if is_cat[j] else 0)
         for j, pr in enumerate(matrix.predictors)],
        dtype=np.int64,
    )
    mtry = config.rf_params.get("mtry") or max(1, math.ceil(math.sqrt(p)))
    n_trees = config.rf_params.get("n_trees", 100)
    min_leaf = config.rf_params.get("min_leaf", 5)

    outputs = []
    for chain in range(config.m):
        work = matrix.values.copy()
        for j in incomplete:
            rng = stream(config.seed, "impute-init", chain, j)
            observed = matrix.values[train, j][~mask[train, j]]
            need = mask[:, j]
            work[need, j] = rng.choice(observed, size=int(need.sum()), replace=True)

        for sweep in range(config.n_iterations):
            for j in incomplete:
                rng = stream(config.seed, "impute", chain, sweep, j)
                others = [c for c in range(p) if c != j]
                X_all = work[:, others]
                fit_rows = train[~mask[train, j]]
                y_fit = matrix.values[fit_rows, j]
                need = np.flatnonzero(mask[:, j])
                forest = RegressionForest(
                    n_trees=n_trees, mtry=min(mtry, len(others)), min_leaf=min_leaf,
                    seed=stream(config.seed, "impute-forest", chain, sweep, j).integers(2**63),
                    n_classes=int(n_levels[j]) if is_cat[j] else 0,
                )
                forest.fit(X_all[fit_rows],
                           y_fit.astype(np.int64) if is_cat[j] else y_fit,
                           is_cat[others], n_levels[others])
                pred = forest.predict(X_all[need])
                if is_cat[j]:
                    probs = pred / pred.sum(axis=1, keepdims=True)
                    cum = probs.cumsum(axis=1)
                    draws = rng.random((len(need), 1))
                    work[need, j] = (draws < cum).argmax(axis=1).astype(float)
                else:
                    resid = y_fit - forest.predict(X_all[fit_rows])
                    sigma = float(resid.std())
                    work[need, j] = pred + rng.normal(0.0, sigma, len(need))

        out = matrix.copy()
        out.values = work
        outputs.append(out)
    return outputs
