"""Logistic regression by full-batch gradient descent with backtracking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_EPOCHS = 500
GRAD_TOL = 1e-6


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss_and_grad(w: np.ndarray, X1: np.ndarray, y: np.ndarray):
    """Mean negative log-likelihood and its gradient; X1 carries the bias column."""
    z = X1 @ w
    p = _sigmoid(z)
    eps = 1e-12
    loss = -np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps))
    grad = X1.T @ (p - y) / len(y)
    return float(loss), grad


@dataclass
class LogisticModel:
    coef: np.ndarray | None = None
    intercept: float = 0.0
    converged: bool = False
    n_epochs: int = 0
    warnings: list[str] = field(default_factory=list)

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        X1 = np.column_stack([X, np.ones(len(X))])
        w = np.zeros(X1.shape[1])
        step = 1.0
        loss, grad = logistic_loss_and_grad(w, X1, y)
        for epoch in range(MAX_EPOCHS):
            gnorm = float(np.abs(grad).max())
            if gnorm < GRAD_TOL:
                self.converged = True
                break
            # Armijo backtracking on the mean NLL
            g2 = float(grad @ grad)
            t = step
            for _ in range(40):
                cand = w - t * grad
                new_loss, new_grad = logistic_loss_and_grad(cand, X1, y)
                if new_loss <= loss - 1e-4 * t * g2:
                    break
                t *= 0.5
            w, loss, grad = cand, new_loss, new_grad
            step = min(t * 2.0, 64.0)
            self.n_epochs = epoch + 1
        if not self.converged:
            self.warnings.append("gradient norm above tolerance at epoch limit")
        self.coef = w[:-1]
        self.intercept = float(w[-1])
        return self

    def decision(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(X))

    def to_dict(self) -> dict:
        return {
            "coef": self.coef.tolist(), "intercept": self.intercept,
            "converged": self.converged, "n_epochs": self.n_epochs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        m = cls(coef=np.asarray(d["coef"], dtype=float), intercept=d["intercept"],
                converged=d["converged"], n_epochs=d["n_epochs"])
        return m
