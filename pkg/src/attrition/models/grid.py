"""Hyperparameter grids and grid-search tuning by stratified CV."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .. import evaluation
from ..features import FeatureMatrix, encode_for_model


class TuningError(RuntimeError):
    pass


#: value sets used by the tuning procedure, per model family
GRID_VALUES = {
    "Logistic": {},
    "KNN": {"k": (9, 19, 39, 59, 99, 199, 299)},
    "NaiveBayes": {"laplace": (0.0, 0.1, 0.5, 1.0)},
    "NeuralNet": {
        "units1": (256, 512, 1024),
        "ratio2": (0.0, 0.25, 0.5),
        "dropout": (0.0, 0.5),
        "epochs": (5, 10),
    },
    "RandomForest": {"n_trees": (500, 1000, 1500), "mtry": (3, 5, 6, 7)},
    "SVM": {
        "kernel": ("rbf", "linear", "poly"),
        "cost": (0.1, 0.5, 1.0),
        "gamma_scale": (0.01, 0.1, 1.0, 10.0),   # divided by |predictors|; RBF only
        "pos_weight": (1, 3, 5),
    },
}


def expand_grid(family: str, n_predictors: int,
                values: dict | None = None) -> list[dict]:
    """Materialize the grid cells for one family, in listed order."""
    v = GRID_VALUES[family] if values is None else values
    if family == "Logistic":
        return [{}]
    if family == "KNN":
        return [{"k": k} for k in v["k"]]
    if family == "NaiveBayes":
        return [{"laplace": a} for a in v["laplace"]]
    if family == "NeuralNet":
        return [
            {"units1": u, "ratio2": r, "dropout": d, "epochs": e}
            for u, r, d, e in product(v["units1"], v["ratio2"], v["dropout"], v["epochs"])
        ]
    if family == "RandomForest":
        return [{"n_trees": t, "mtry": m} for t, m in product(v["n_trees"], v["mtry"])]
    if family == "SVM":
        cells = []
        for kernel in v["kernel"]:
            if kernel == "rbf":
                for c, g, w in product(v["cost"], v["gamma_scale"], v["pos_weight"]):
                    cells.append({"kernel": kernel, "cost": c,
                                  "gamma": g / n_predictors, "pos_weight": w})
            else:
                for c, w in product(v["cost"], v["pos_weight"]):
                    cells.append({"kernel": kernel, "cost": c,
                                  "gamma": 1.0 / n_predictors, "pos_weight": w})
        return cells
    raise TuningError(f"unknown family {family!r}")


def _cost_key(family: str, params: dict) -> tuple:
    """Cheapness order used to break score ties (smaller is preferred)."""
    if family == "RandomForest":
        return (params["n_trees"], params["mtry"])
    if family == "NeuralNet":
        return (params["units1"] * (1 + params["ratio2"]), params["epochs"])
    if family == "KNN":
        return (params["k"],)
    if family == "SVM":
        return (params["cost"],)
    return ()


@dataclass
class GridSearchResult:
    family: str
    best_params: dict
    cells: list[dict] = field(default_factory=list)   # params, mean_score, fold_scores


def grid_search(family: str, cells: list[dict], matrix: FeatureMatrix,
                labels: np.ndarray, k_folds: int = 3,
                selection_metric: str = "auprc", seed: int = 0) -> GridSearchResult:
    """Score every grid cell by stratified k-fold CV; highest mean metric wins.

    Ties go to the cheaper configuration, then to the first-listed cell.
    """
    from . import train_model_on_encoded  # local import to avoid a cycle

    if not cells:
        raise TuningError("empty grid")
    labels = np.asarray(labels).astype(int)
    metric_fn = {"auprc": evaluation.auprc, "auroc": evaluation.auroc}[selection_metric]

    for attempt in range(2):
        folds = evaluation.split_cv(matrix.n_rows, labels, k=k_folds, seed=seed + attempt)
        ok = all(
            len(np.unique(labels[tr])) == 2 and len(np.unique(labels[te])) == 2
            for tr, te in folds
        )
        if ok:
            break
    else:
        raise TuningError("a CV fold contains a single class even after re-stratifying")

    encodings = [
        (encode_for_model(matrix, family, train_rows=tr), tr, te) for tr, te in folds
    ]
    scored = []
    for idx, params in enumerate(cells):
        fold_scores = []
        for enc, tr, te in encodings:
            model = train_model_on_encoded(
                family, params, enc, labels, tr, seed=(seed, "grid", idx)
            )
            fold_scores.append(metric_fn(model.predict_proba(enc.X[te]), labels[te]))
        scored.append({
            "params": params,
            "fold_scores": fold_scores,
            "mean_score": float(np.mean(fold_scores)),
        })

    order = sorted(
        range(len(cells)),
        key=lambda i: (-scored[i]["mean_score"], _cost_key(family, cells[i]), i),
    )
    return GridSearchResult(family=family, best_params=cells[order[0]], cells=scored)
