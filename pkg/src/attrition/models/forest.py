"""Random forest on bootstrap samples with Gini trees grown to full depth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._rng import stream, stream_seed
from ._tree import Tree, grow_tree, prepare_bins


@dataclass
class RandomForestModel:
    n_trees: int = 500
    mtry: int = 6
    min_leaf: int = 1
    seed: int = 0
    trees: list[Tree] = field(default_factory=list)
    is_cat: np.ndarray | None = None
    n_levels: np.ndarray | None = None

    def fit(self, X: np.ndarray, y: np.ndarray,
            is_cat: np.ndarray | None = None, n_levels: np.ndarray | None = None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n, p = X.shape
        self.is_cat = np.zeros(p, dtype=bool) if is_cat is None else np.asarray(is_cat, dtype=bool)
        self.n_levels = (
            np.zeros(p, dtype=np.int64) if n_levels is None else np.asarray(n_levels, dtype=np.int64)
        )
        mtry = min(self.mtry, p)
        bins = prepare_bins(X, self.is_cat)
        self.trees = []
        for t in range(self.n_trees):
            boot = stream(self.seed, "bootstrap", t).integers(0, n, n)
            self.trees.append(
                grow_tree(
                    X, y, is_cat=self.is_cat, n_levels=self.n_levels, mtry=mtry,
                    min_leaf=self.min_leaf, seed=stream_seed(self.seed, "tree", t),
                    sample_idx=boot, n_classes=2, bins=bins,
                )
            )
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree.predict(X, self.is_cat)[:, 1]
        return acc / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees, "mtry": self.mtry, "min_leaf": self.min_leaf,
            "seed": self.seed,
            "is_cat": self.is_cat.tolist(), "n_levels": self.n_levels.tolist(),
            "trees": [
                {
                    "feature": t.feature.tolist(), "thresh": t.thresh.tolist(),
                    "left": t.left.tolist(), "right": t.right.tolist(),
                    "value": t.value.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForestModel":
        model = cls(n_trees=d["n_trees"], mtry=d["mtry"], min_leaf=d["min_leaf"], seed=d["seed"])
        model.is_cat = np.asarray(d["is_cat"], dtype=bool)
        model.n_levels = np.asarray(d["n_levels"], dtype=np.int64)
        model.trees = [
            Tree(
                feature=np.asarray(t["feature"], dtype=np.int64),
                thresh=np.asarray(t["thresh"], dtype=np.float64),
                left=np.asarray(t["left"], dtype=np.int64),
                right=np.asarray(t["right"], dtype=np.int64),
                value=np.asarray(t["value"], dtype=np.float64),
            )
            for t in d["trees"]
        ]
        return model


@dataclass
class RegressionForest:
    """Smaller forest used by the chained-equation imputer."""

    n_trees: int = 100
    mtry: int = 7
    min_leaf: int = 5
    seed: int = 0
    trees: list[Tree] = field(default_factory=list)
    is_cat: np.ndarray | None = None
    n_levels: np.ndarray | None = None
    n_classes: int = 0           # 0 = regression, else classification

    def fit(self, X, y, is_cat, n_levels):
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape
        self.is_cat = np.asarray(is_cat, dtype=bool)
        self.n_levels = np.asarray(n_levels, dtype=np.int64)
        mtry = min(self.mtry, p)
        bins = prepare_bins(X, self.is_cat)
        self.trees = []
        for t in range(self.n_trees):
            boot = stream(self.seed, "imp-bootstrap", t).integers(0, n, n)
            self.trees.append(
                grow_tree(
                    X, y, is_cat=self.is_cat, n_levels=self.n_levels, mtry=mtry,
                    min_leaf=self.min_leaf, seed=stream_seed(self.seed, "imp-tree", t),
                    sample_idx=boot, n_classes=self.n_classes, bins=bins,
                )
            )
        return self

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if self.n_classes:
            acc = np.zeros((X.shape[0], self.n_classes))
        else:
            acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree.predict(X, self.is_cat)
        return acc / len(self.trees)
