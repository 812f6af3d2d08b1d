"""Naive Bayes over discretized inputs with Laplace smoothing.

Expects the binned encoding: every column holds small non-negative level
codes (numerics already cut into train-fitted quantile bins).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class NaiveBayesModel:
    laplace: float = 1.0
    log_prior: np.ndarray | None = None
    log_lik: list = field(default_factory=list)   # per column: (2, n_levels) log P(v | class)
    n_levels: np.ndarray | None = None

    def fit(self, X: np.ndarray, y: np.ndarray, n_levels: np.ndarray, seed: int = 0):
        X = np.asarray(X)
        y = np.asarray(y).astype(int)
        self.n_levels = np.asarray(n_levels, dtype=int)
        n_class = np.array([(y == 0).sum(), (y == 1).sum()], dtype=float)
        self.log_prior = np.log(n_class / n_class.sum())
        self.log_lik = []
        with np.errstate(divide="ignore"):
            for j in range(X.shape[1]):
                nl = max(int(self.n_levels[j]), 1)
                table = np.zeros((2, nl))
                codes = X[:, j].astype(int)
                for c in (0, 1):
                    cnt = np.bincount(codes[y == c], minlength=nl).astype(float)
                    table[c] = np.log(
                        (cnt + self.laplace) / (n_class[c] + self.laplace * nl)
                    )
                self.log_lik.append(table)
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X)
        n = len(X)
        log_post = np.tile(self.log_prior, (n, 1))
        for j, table in enumerate(self.log_lik):
            codes = np.clip(X[:, j].astype(int), 0, table.shape[1] - 1)
            log_post += table[:, codes].T
        # stable two-class softmax; all -inf degenerates to 1/2
        m = log_post.max(axis=1, keepdims=True)
        finite = np.isfinite(m[:, 0])
        p = np.full(n, 0.5)
        if finite.any():
            z = np.exp(log_post[finite] - m[finite])
            p[finite] = z[:, 1] / z.sum(axis=1)
        return p

    def to_dict(self) -> dict:
        return {
            "laplace": self.laplace,
            "log_prior": self.log_prior.tolist(),
            "log_lik": [t.tolist() for t in self.log_lik],
            "n_levels": self.n_levels.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NaiveBayesModel":
        m = cls(laplace=d["laplace"])
        m.log_prior = np.asarray(d["log_prior"], dtype=float)
        m.log_lik = [np.asarray(t, dtype=float) for t in d["log_lik"]]
        m.n_levels = np.asarray(d["n_levels"], dtype=int)
        return m
