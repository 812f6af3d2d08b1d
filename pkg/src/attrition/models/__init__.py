"""Six classifier families behind one train/score interface.

Every family is trained here from first principles; the only compiled help
is the numba tree kernel.  A fitted model is wrapped in TrainedModel, which
records the family, the chosen hyperparameters, and the encoding descriptor
it was fitted under, and can round-trip through JSON for audit.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._rng import stream_seed
from ..features import EncodedMatrix
from .bayes import NaiveBayesModel
from .forest import RandomForestModel, RegressionForest
from .grid import GRID_VALUES, GridSearchResult, TuningError, expand_grid, grid_search
from .linear import LogisticModel, logistic_loss_and_grad
from .neighbors import KNNModel
from .neural import NeuralNetModel, init_params, nn_forward, nn_loss_and_grad
from .svm import SVMModel


class ModelFamily(str, enum.Enum):
    Logistic = "Logistic"
    KNN = "KNN"
    NaiveBayes = "NaiveBayes"
    NeuralNet = "NeuralNet"
    RandomForest = "RandomForest"
    SVM = "SVM"


ALL_FAMILIES = [f.value for f in ModelFamily]


class TrainingError(RuntimeError):
    pass


class ScoringError(RuntimeError):
    pass


@dataclass
class TrainedModel:
    family: str
    params: dict
    model: object
    encoding: dict | None = None
    n_features: int = 0

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ScoringError(
                f"expected {self.n_features} encoded columns, got {X.shape}"
            )
        p = self.model.predict_proba(X)
        return np.clip(p, 0.0, 1.0)

    def to_json(self) -> str:
        return json.dumps({
            "family": self.family,
            "params": self.params,
            "n_features": self.n_features,
            "encoding": self.encoding,
            "model": self.model.to_dict(),
        })

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        d = json.loads(text)
        loader = {
            "Logistic": LogisticModel, "KNN": KNNModel, "NaiveBayes": NaiveBayesModel,
            "NeuralNet": NeuralNetModel, "RandomForest": RandomForestModel, "SVM": SVMModel,
        }[d["family"]]
        return cls(
            family=d["family"], params=d["params"], model=loader.from_dict(d["model"]),
            encoding=d.get("encoding"), n_features=d["n_features"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        return cls.from_json(Path(path).read_text())


def train_classifier(family: str | ModelFamily, params: dict, X: np.ndarray,
                     labels: np.ndarray, seed: int | tuple = 0, *,
                     cat_mask: np.ndarray | None = None,
                     n_levels: np.ndarray | None = None,
                     encoding: dict | None = None) -> TrainedModel:
    """Fit one classifier on an encoded matrix.

    ``cat_mask``/``n_levels`` describe native categorical columns and only
    matter for the forest and naive Bayes.
    """
    family = ModelFamily(family).value
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels).astype(int)
    if np.isnan(X).any():
        raise TrainingError("training matrix contains missing values")
    if len(np.unique(y)) < 2:
        raise TrainingError("training labels contain a single class")
    seed_int = stream_seed(0, seed) if not isinstance(seed, int) else seed

    if family == "Logistic":
        model = LogisticModel().fit(X, y, seed=seed_int)
    elif family == "KNN":
        model = KNNModel(k=params["k"]).fit(X, y, seed=seed_int)
    elif family == "NaiveBayes":
        if n_levels is None:
            raise TrainingError("naive Bayes needs the binned encoding's level counts")
        model = NaiveBayesModel(laplace=params["laplace"]).fit(X, y, n_levels, seed=seed_int)
    elif family == "NeuralNet":
        model = NeuralNetModel(
            units1=params["units1"], ratio2=params["ratio2"],
            dropout=params["dropout"], epochs=params["epochs"],
        ).fit(X, y, seed=seed_int)
    elif family == "RandomForest":
        model = RandomForestModel(
            n_trees=params["n_trees"], mtry=params["mtry"],
            min_leaf=params.get("min_leaf", 1), seed=seed_int,
        ).fit(X, y, is_cat=cat_mask, n_levels=n_levels)
    elif family == "SVM":
        model = SVMModel(
            kernel=params["kernel"], cost=params["cost"], gamma=params["gamma"],
            pos_weight=params["pos_weight"],
        ).fit(X, y, seed=seed_int)
    else:
        raise TrainingError(f"unknown family {family!r}")
    return TrainedModel(family=family, params=dict(params), model=model,
                        encoding=encoding, n_features=X.shape[1])


def train_model_on_encoded(family: str, params: dict, enc: EncodedMatrix,
                           labels: np.ndarray, train_rows: np.ndarray,
                           seed: int | tuple = 0) -> TrainedModel:
    """Convenience wrapper: slice training rows out of an encoded matrix."""
    tr = np.asarray(train_rows)
    return train_classifier(
        family, params, enc.X[tr], np.asarray(labels)[tr], seed=seed,
        cat_mask=enc.cat_mask, n_levels=enc.n_levels, encoding=enc.descriptor,
    )


def predict_proba(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    return model.predict_proba(X)


def hyperparameter_grid() -> dict:
    """The per-family tuning value sets."""
    return {k: dict(v) for k, v in GRID_VALUES.items()}


__all__ = [
    "ModelFamily", "ALL_FAMILIES", "TrainedModel", "TrainingError", "ScoringError",
    "train_classifier", "train_model_on_encoded", "predict_proba",
    "hyperparameter_grid", "expand_grid", "grid_search", "GridSearchResult", "TuningError",
    "LogisticModel", "KNNModel", "NaiveBayesModel", "NeuralNetModel",
    "RandomForestModel", "RegressionForest", "SVMModel",
    "logistic_loss_and_grad", "nn_loss_and_grad", "nn_forward", "init_params",
]
