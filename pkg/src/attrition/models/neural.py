"""Feed-forward network: ReLU hidden layers, two-unit softmax, cross-entropy.

Trained with plain mini-batch gradient descent at a fixed step size; the
dropout hyperparameter masks hidden units during training (inverted dropout,
so scoring needs no rescaling).  The step size is sized for standardized
inputs and mean-reduced loss; smaller values cannot move the weights within
the 5-10 epoch budget of the tuning grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._rng import stream

LEARNING_RATE = 0.1
BATCH_SIZE = 128


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def nn_forward(params: list, X: np.ndarray, dropout: float = 0.0,
               rng: np.random.Generator | None = None):
    """Returns (probs, cache) where cache holds activations and dropout masks."""
    a = X
    cache = [(None, a, None)]
    for i, (W, b) in enumerate(params[:-1]):
        z = a @ W + b
        a = np.maximum(z, 0.0)
        mask = None
        if dropout > 0.0 and rng is not None:
            mask = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            a = a * mask
        cache.append((z, a, mask))
    W, b = params[-1]
    logits = a @ W + b
    probs = _softmax(logits)
    return probs, cache


def nn_loss_and_grad(params: list, X: np.ndarray, y: np.ndarray,
                     dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Mean cross-entropy and per-parameter gradients by backpropagation."""
    n = len(X)
    probs, cache = nn_forward(params, X, dropout, rng)
    onehot = np.zeros((n, 2))
    onehot[np.arange(n), y.astype(int)] = 1.0
    loss = float(-np.mean(np.log(probs[np.arange(n), y.astype(int)] + 1e-12)))

    grads = [None] * len(params)
    delta = (probs - onehot) / n
    for i in range(len(params) - 1, -1, -1):
        _, a_prev, _ = cache[i]
        W, _ = params[i]
        grads[i] = (a_prev.T @ delta, delta.sum(axis=0))
        if i > 0:
            z_prev, _, mask_prev = cache[i]
            delta = delta @ W.T
            if mask_prev is not None:
                delta = delta * mask_prev
            delta = delta * (z_prev > 0)
    return loss, grads


def init_params(n_features: int, units1: int, units2: int, seed: int) -> list:
    rng = stream(seed, "nn-init")
    sizes = [n_features, units1] + ([units2] if units2 else []) + [2]
    params = []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(d_in)
        params.append((rng.uniform(-bound, bound, (d_in, d_out)), np.zeros(d_out)))
    return params


@dataclass
class NeuralNetModel:
    units1: int = 256
    ratio2: float = 0.0
    dropout: float = 0.0
    epochs: int = 5
    lr: float = LEARNING_RATE
    batch_size: int = BATCH_SIZE
    params: list = field(default_factory=list)

    @property
    def units2(self) -> int:
        return int(round(self.units1 * self.ratio2))

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y).astype(int)
        self.params = init_params(X.shape[1], self.units1, self.units2, seed)
        shuffle_rng = stream(seed, "nn-shuffle")
        drop_rng = stream(seed, "nn-dropout")
        for _ in range(self.epochs):
            order = shuffle_rng.permutation(len(X))
            for s in range(0, len(X), self.batch_size):
                batch = order[s : s + self.batch_size]
                _, grads = nn_loss_and_grad(
                    self.params, X[batch], y[batch], self.dropout, drop_rng
                )
                self.params = [
                    (W - self.lr * gW, b - self.lr * gb)
                    for (W, b), (gW, gb) in zip(self.params, grads)
                ]
        return self

    def predict_proba_pair(self, X: np.ndarray) -> np.ndarray:
        probs, _ = nn_forward(self.params, np.asarray(X, dtype=float))
        return probs

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba_pair(X)[:, 1]

    def to_dict(self) -> dict:
        return {
            "units1": self.units1, "ratio2": self.ratio2, "dropout": self.dropout,
            "epochs": self.epochs, "lr": self.lr, "batch_size": self.batch_size,
            "params": [[W.tolist(), b.tolist()] for W, b in self.params],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NeuralNetModel":
        m = cls(units1=d["units1"], ratio2=d["ratio2"], dropout=d["dropout"],
                epochs=d["epochs"], lr=d["lr"], batch_size=d["batch_size"])
        m.params = [(np.asarray(W, dtype=float), np.asarray(b, dtype=float)) for W, b in d["params"]]
        return m
