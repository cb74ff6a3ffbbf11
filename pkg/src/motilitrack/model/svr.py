"""Linear epsilon-insensitive SVR trained by dual coordinate descent."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import TrainError
from .scaling import SCALERS, Scaler

log = logging.getLogger(__name__)

C_GRID = (1e-1, 1e0, 1e1, 1e2, 1e3)
DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class SvrModel:
    weights: np.ndarray  # (3, d)
    bias: np.ndarray  # (3,)
    scaler: Scaler
    C: float
    epsilon: float

    kind = "svr"

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self.scaler.transform(X) @ self.weights.T + self.bias

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "scaler": self.scaler.to_dict(),
            "C": self.C,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvrModel":
        return cls(np.asarray(d["weights"], dtype=np.float64), np.asarray(d["bias"], dtype=np.float64),
                   Scaler.from_dict(d["scaler"]), float(d["C"]), float(d["epsilon"]))


@njit(cache=True)
def _dual_cd(Q, y, C, epsilon, tol, max_passes, seed):
    """Solve min 1/2 b'Qb - y'b + eps*|b|_1 s.t. -C <= b <= C.

    Returns (beta, passes, gap). Q is the Gram matrix of the bias-augmented
    inputs; Qb is maintained incrementally so each update costs O(n).
    """
    np.random.seed(seed)
    n = y.size
    beta = np.zeros(n)
    Qb = np.zeros(n)
    gap = np.inf
    passes = 0
    for passes in range(1, max_passes + 1):
        for i in np.random.permutation(n):
            qii = Q[i, i]
            if qii <= 0:
                continue
            g = Qb[i] - y[i]
            b = beta[i]
            if g + epsilon < qii * b:
                d = -(g + epsilon) / qii
            elif g - epsilon > qii * b:
                d = -(g - epsilon) / qii
            else:
                d = -b
            nb = min(max(b + d, -C), C)
            if nb != b:
                delta = nb - b
                for j in range(n):
                    Qb[j] += delta * Q[j, i]
                beta[i] = nb
        wnorm2 = 0.0
        loss = 0.0
        lin = 0.0
        l1 = 0.0
        for j in range(n):
            wnorm2 += beta[j] * Qb[j]
            loss += max(abs(Qb[j] - y[j]) - epsilon, 0.0)
            lin += y[j] * beta[j]
            l1 += abs(beta[j])
        primal = 0.5 * wnorm2 + C * loss
        gap = primal + 0.5 * wnorm2 - lin + epsilon * l1
        if gap <= tol * max(1.0, abs(primal)):
            break
    return beta, passes, gap


def train_svr(X, y, scaler: str = "none", C: float = 1.0, epsilon: float = DEFAULT_EPSILON,
              tol: float = 1e-4, max_passes: int = 10_000, seed: int = 0,
              gram: np.ndarray | None = None) -> SvrModel:
    """Fit three independent linear SVRs (one per motility target).

    The bias is learned as the weight of a constant input feature on targets
    centred by their training mean, so a constant target is reproduced exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise TrainError(f"X rows ({X.shape[0] if X.ndim else 0}) and labels ({Y.shape[0]}) misaligned")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise TrainError("non-finite values in training features or labels")
    if not C > 0:
        raise TrainError(f"C must be positive, got {C}")
    sc = Scaler.fit(scaler, X)
    Xs = sc.transform(X)
    Q = gram if gram is not None else Xs @ Xs.T + 1.0
    centre = Y.mean(axis=0)
    Q = np.ascontiguousarray(Q)
    weights, bias = [], []
    for k in range(Y.shape[1]):
        target = np.ascontiguousarray(Y[:, k] - centre[k])
        beta, passes, gap = _dual_cd(Q, target, float(C), float(epsilon), float(tol),
                                     int(max_passes), int(seed) + k)
        if passes == max_passes:
            log.debug("svr target %d stopped at %d passes, duality gap %.3g", k, passes, gap)
        weights.append(Xs.T @ beta)
        bias.append(centre[k] + beta.sum())
    return SvrModel(np.array(weights), np.array(bias), sc, float(C), float(epsilon))


def kfold_indices(groups, n_splits: int, seed: int):
    """Group-aware K-fold: yields (train_idx, test_idx) over row indices."""
    groups = np.asarray(groups)
    uniq = np.unique(groups)
    rng = np.random.default_rng(seed)
    order = uniq[rng.permutation(uniq.size)]
    n_splits = min(n_splits, uniq.size)
    if n_splits < 2:
        raise TrainError("internal cross-validation needs at least two groups")
    for chunk in np.array_split(order, n_splits):
        test = np.isin(groups, chunk)
        yield np.nonzero(~test)[0], np.nonzero(test)[0]


def _group_mean(pred, groups):
    uniq, inv = np.unique(groups, return_inverse=True)
    sums = np.zeros((uniq.size, pred.shape[1]))
    np.add.at(sums, inv, pred)
    return sums / np.bincount(inv)[:, None], uniq


def select_svr(X, y, scalers=SCALERS, Cs=C_GRID, epsilon: float = DEFAULT_EPSILON,
               n_splits: int = 5, seed: int = 0, groups=None, tol: float = 1e-4,
               max_passes: int = 10_000):
    """Grid search over (scaler, C) by internal K-fold MAE.

    Predictions are clipped to [0, 100] and mean-aggregated per group before
    scoring. Ties go to the smaller C, then to scaler order none < standard < minmax.
    Returns ``(scaler, C, cv_mae, cv_rmse)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(y, dtype=np.float64)
    groups = np.arange(X.shape[0]) if groups is None else np.asarray(groups)
    folds = list(kfold_indices(groups, n_splits, seed))
    rank = {name: i for i, name in enumerate(SCALERS)}
    results = []
    for scaler in scalers:
        preds = {C: np.zeros_like(Y) for C in Cs}
        for tr, te in folds:
            sc = Scaler.fit(scaler, X[tr])
            Xs = sc.transform(X[tr])
            gram = Xs @ Xs.T + 1.0
            for C in Cs:
                m = train_svr(X[tr], Y[tr], scaler, C, epsilon, tol, max_passes, seed, gram=gram)
                preds[C][te] = np.clip(m.decision_function(X[te]), 0.0, 100.0)
        for C in Cs:
            agg_pred, uniq = _group_mean(preds[C], groups)
            agg_true, _ = _group_mean(Y, groups)
            err = agg_pred - agg_true
            results.append((float(np.mean(np.abs(err))), float(C), rank.get(scaler, 99), scaler,
                            float(np.sqrt(np.mean(err ** 2)))))
    results.sort(key=lambda r: (r[0], r[1], r[2]))
    best = results[0]
    return best[3], best[1], best[0], best[4]
