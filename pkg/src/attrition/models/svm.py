"""Soft-margin SVM trained by sequential minimal optimization.

The dropout class carries a cost multiplier, so its margin violations are
penalized more heavily.  Probabilities come from a Platt-style sigmoid over
decision values, fitted on a 20% held-in slice of the training rows that the
SMO solver never sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._rng import stream

SMO_TOL = 1e-3
SMO_MAX_QUIET_PASSES = 5
SMO_MAX_SWEEPS = 80
POLY_DEGREE = 3
POLY_COEF0 = 0.0
CALIBRATION_FRACTION = 0.2


def _kernel_matrix(kind: str, gamma: float, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    G = A @ B.T
    if kind == "linear":
        return G
    if kind == "poly":
        return (gamma * G + POLY_COEF0) ** POLY_DEGREE
    if kind == "rbf":
        a2 = (A**2).sum(axis=1)[:, None]
        b2 = (B**2).sum(axis=1)[None, :]
        d2 = np.maximum(a2 + b2 - 2.0 * G, 0.0)
        return np.exp(-gamma * d2)
    raise ValueError(f"unknown kernel {kind!r}")


def _smo(K: np.ndarray, s: np.ndarray, C_vec: np.ndarray, seed: int):
    """Simplified SMO over a precomputed kernel; returns (alpha, b)."""
    n = len(s)
    rng = stream(seed, "smo")
    alpha = np.zeros(n)
    b = 0.0
    quiet = 0
    sweeps = 0
    while quiet < SMO_MAX_QUIET_PASSES and sweeps < SMO_MAX_SWEEPS:
        changed = 0
        asy = alpha * s
        for i in range(n):
            Ei = float(asy @ K[:, i]) + b - s[i]
            if (s[i] * Ei < -SMO_TOL and alpha[i] < C_vec[i]) or (
                s[i] * Ei > SMO_TOL and alpha[i] > 0
            ):
                j = int(rng.integers(0, n - 1))
                if j >= i:
                    j += 1
                Ej = float(asy @ K[:, j]) + b - s[j]
                ai_old, aj_old = alpha[i], alpha[j]
                if s[i] != s[j]:
                    L = max(0.0, aj_old - ai_old)
                    H = min(C_vec[j], C_vec[i] + aj_old - ai_old)
                else:
                    L = max(0.0, ai_old + aj_old - C_vec[i])
                    H = min(C_vec[j], ai_old + aj_old)
                if L >= H:
                    continue
                eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
                if eta >= 0:
                    continue
                aj = np.clip(aj_old - s[j] * (Ei - Ej) / eta, L, H)
                if abs(aj - aj_old) < 1e-7:
                    continue
                ai = ai_old + s[i] * s[j] * (aj_old - aj)
                alpha[i], alpha[j] = ai, aj
                asy[i], asy[j] = ai * s[i], aj * s[j]
                b1 = b - Ei - s[i] * (ai - ai_old) * K[i, i] - s[j] * (aj - aj_old) * K[i, j]
                b2 = b - Ej - s[i] * (ai - ai_old) * K[i, j] - s[j] * (aj - aj_old) * K[j, j]
                if 0 < ai < C_vec[i]:
                    b = b1
                elif 0 < aj < C_vec[j]:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                changed += 1
        quiet = quiet + 1 if changed == 0 else 0
        sweeps += 1
    return alpha, b


def _platt_fit(f: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Newton fit of P(y=1 | f) = 1 / (1 + exp(A f + B)) with prior-corrected targets."""
    prior1 = float((y == 1).sum())
    prior0 = float(len(y) - prior1)
    hi = (prior1 + 1.0) / (prior1 + 2.0)
    lo = 1.0 / (prior0 + 2.0)
    t = np.where(y == 1, hi, lo)
    A, B = 0.0, float(np.log((prior0 + 1.0) / (prior1 + 1.0)))
    eps = 1e-12

    def objective(a, b):
        fab = a * f + b
        return float(
            np.sum(np.where(fab >= 0, t * fab + np.log1p(np.exp(-fab)),
                            (t - 1) * fab + np.log1p(np.exp(fab))))
        )

    val = objective(A, B)
    for _ in range(100):
        fab = A * f + B
        p = np.where(fab >= 0, np.exp(-fab) / (1 + np.exp(-fab)), 1 / (1 + np.exp(fab)))
        d1 = t - p
        d2 = p * (1 - p)
        g1 = float(np.sum(f * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        h11 = float(np.sum(f * f * d2)) + eps
        h22 = float(np.sum(d2)) + eps
        h21 = float(np.sum(f * d2))
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        step = 1.0
        for _ in range(20):
            newA, newB = A + step * dA, B + step * dB
            new_val = objective(newA, newB)
            if new_val < val + 1e-4 * step * (g1 * dA + g2 * dB):
                A, B, val = newA, newB, new_val
                break
            step *= 0.5
        else:
            break
    return A, B


@dataclass
class SVMModel:
    kernel: str = "rbf"
    cost: float = 1.0
    gamma: float = 0.1
    pos_weight: float = 1.0
    support_X: np.ndarray | None = None
    support_sy: np.ndarray | None = None     # alpha_i * s_i for support vectors
    bias: float = 0.0
    platt_a: float = -1.0
    platt_b: float = 0.0

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int = 0):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y).astype(int)
        rng = stream(seed, "svm-split")
        idx_pos = rng.permutation(np.flatnonzero(y == 1))
        idx_neg = rng.permutation(np.flatnonzero(y == 0))
        n_cal_pos = max(1, int(round(CALIBRATION_FRACTION * len(idx_pos))))
        n_cal_neg = max(1, int(round(CALIBRATION_FRACTION * len(idx_neg))))
        cal = np.concatenate([idx_pos[:n_cal_pos], idx_neg[:n_cal_neg]])
        fit_idx = np.concatenate([idx_pos[n_cal_pos:], idx_neg[n_cal_neg:]])
        fit_idx.sort()
        cal.sort()

        Xf, yf = X[fit_idx], y[fit_idx]
        s = np.where(yf == 1, 1.0, -1.0)
        C_vec = np.where(s > 0, self.cost * self.pos_weight, self.cost)
        dtype = np.float64 if len(Xf) <= 4000 else np.float32
        K = _kernel_matrix(self.kernel, self.gamma, Xf, Xf).astype(dtype)
        alpha, b = _smo(K, s, C_vec, seed)

        sv = alpha > 1e-9
        self.support_X = Xf[sv]
        self.support_sy = (alpha * s)[sv]
        self.bias = float(b)
        f_cal = self.decision(X[cal])
        self.platt_a, self.platt_b = _platt_fit(f_cal, y[cal])
        return self

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.support_X is None or len(self.support_X) == 0:
            return np.full(len(X), self.bias)
        K = _kernel_matrix(self.kernel, self.gamma, X, self.support_X)
        return K @ self.support_sy + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        fab = self.platt_a * self.decision(X) + self.platt_b
        return np.where(fab >= 0, np.exp(-fab) / (1 + np.exp(-fab)), 1 / (1 + np.exp(fab)))

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel, "cost": self.cost, "gamma": self.gamma,
            "pos_weight": self.pos_weight, "bias": self.bias,
            "platt_a": self.platt_a, "platt_b": self.platt_b,
            "support_X": self.support_X.tolist(), "support_sy": self.support_sy.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SVMModel":
        m = cls(kernel=d["kernel"], cost=d["cost"], gamma=d["gamma"], pos_weight=d["pos_weight"])
        m.bias = d["bias"]
        m.platt_a = d["platt_a"]
        m.platt_b = d["platt_b"]
        m.support_X = np.asarray(d["support_X"], dtype=float)
        m.support_sy = np.asarray(d["support_sy"], dtype=float)
        return m
