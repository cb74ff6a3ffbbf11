"""Fully connected regressor with batch norm before the activation, trained with Adam."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..errors import TrainError
from .scaling import Scaler

log = logging.getLogger(__name__)

SEARCH_SPACE = {
    "batch_size": (16, 32, 64),
    "dropout": (0.2, 0.4),
    "l2": (1e-4, 1e-3, 1e-2),
    "activation": ("elu", "relu"),
    "n_layers": (2, 4, 8),
    "learning_rate": (1e-4, 1e-3, 1e-2),
    "units": (256, 512, 1024),
}
BN_EPS = 1e-3
BN_MOMENTUM = 0.99
ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-7


@dataclass(frozen=True)
class MlpConfig:
    n_layers: int = 2
    units: int = 256
    activation: str = "relu"
    dropout: float = 0.2
    l2: float = 1e-4
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 300
    patience: int = 100
    validation_split: float = 0.2


class _Diverged(Exception):
    pass


def _act(u, kind):
    if kind == "relu":
        return np.maximum(u, 0.0)
    return np.where(u > 0, u, np.expm1(np.minimum(u, 0.0)))


def _act_grad(u, kind):
    if kind == "relu":
        return (u > 0).astype(u.dtype)
    return np.where(u > 0, 1.0, np.exp(np.minimum(u, 0.0)))


@dataclass
class MlpModel:
    config: MlpConfig
    params: list  # per layer: dict(W, b[, gamma, beta, mean, var])
    scaler: Scaler

    kind = "mlp"

    @classmethod
    def initialize(cls, n_inputs: int, config: MlpConfig, scaler: Scaler, seed: int) -> "MlpModel":
        rng = np.random.default_rng(seed)
        params = []
        fan_in = n_inputs
        for _ in range(config.n_layers):
            limit = np.sqrt(6.0 / fan_in)
            params.append({
                "W": rng.uniform(-limit, limit, (fan_in, config.units)),
                "b": np.zeros(config.units),
                "gamma": np.ones(config.units),
                "beta": np.zeros(config.units),
                "mean": np.zeros(config.units),
                "var": np.ones(config.units),
            })
            fan_in = config.units
        limit = np.sqrt(3.0 / fan_in)
        params.append({"W": rng.uniform(-limit, limit, (fan_in, 3)), "b": np.zeros(3)})
        return cls(config, params, scaler)

    @property
    def n_features(self) -> int:
        return self.params[0]["W"].shape[0]

    def trainable(self):
        """(layer, name) pairs of trainable arrays, in a fixed order."""
        for i, p in enumerate(self.params):
            for name in ("W", "b", "gamma", "beta"):
                if name in p:
                    yield i, name

    def _forward(self, X, training, rng=None):
        cache = []
        h = X
        act = self.config.activation
        for p in self.params[:-1]:
            z = h @ p["W"] + p["b"]
            if training:
                mu, var = z.mean(axis=0), z.var(axis=0)
            else:
                mu, var = p["mean"], p["var"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mu) * inv
            u = p["gamma"] * zhat + p["beta"]
            a = _act(u, act)
            mask = None
            if training and rng is not None and self.config.dropout > 0:
                keep = 1.0 - self.config.dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            cache.append((h, zhat, inv, u, mask, mu, var))
            h = a
        out = h @ self.params[-1]["W"] + self.params[-1]["b"]
        cache.append((h,))
        return out, cache

    def raw_predict(self, X) -> np.ndarray:
        out, _ = self._forward(self.scaler.transform(X), training=False)
        return out

    def decision_function(self, X) -> np.ndarray:
        return self.raw_predict(X)

    def loss_and_grads(self, Xs, y, training=False, rng=None):
        """MSE + L2 kernel penalty and its gradient for already-scaled inputs."""
        out, cache = self._forward(Xs, training, rng)
        n = Xs.shape[0]
        diff = out - y
        l2 = self.config.l2
        loss = float(np.mean(diff ** 2)) + l2 * sum(float((p["W"] ** 2).sum()) for p in self.params)
        grads = [dict() for _ in self.params]
        g = 2.0 * diff / diff.size
        h_last = cache[-1][0]
        grads[-1]["W"] = h_last.T @ g + 2 * l2 * self.params[-1]["W"]
        grads[-1]["b"] = g.sum(axis=0)
        g = g @ self.params[-1]["W"].T
        for i in range(len(self.params) - 2, -1, -1):
            p = self.params[i]
            h, zhat, inv, u, mask, _, _ = cache[i]
            if mask is not None:
                g = g * mask
            g = g * _act_grad(u, self.config.activation)
            grads[i]["gamma"] = (g * zhat).sum(axis=0)
            grads[i]["beta"] = g.sum(axis=0)
            dzhat = g * p["gamma"]
            if training:
                dz = inv / n * (n * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0))
            else:
                dz = dzhat * inv
            grads[i]["W"] = h.T @ dz + 2 * l2 * p["W"]
            grads[i]["b"] = dz.sum(axis=0)
            g = dz @ p["W"].T
        return loss, grads, cache

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "scaler": self.scaler.to_dict(),
            "params": [{k: v.tolist() for k, v in p.items()} for p in self.params],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        params = [{k: np.asarray(v, dtype=np.float64) for k, v in p.items()} for p in d["params"]]
        return cls(MlpConfig(**d["config"]), params, Scaler.from_dict(d["scaler"]))


def _split(n, fraction, rng, groups):
    groups = np.arange(n) if groups is None else np.asarray(groups)
    uniq = np.unique(groups)
    n_val = int(round(fraction * uniq.size))
    if uniq.size < 2 or n_val < 1:
        return np.arange(n), np.zeros(0, dtype=np.int64)
    val_groups = rng.choice(uniq, size=n_val, replace=False)
    val = np.isin(groups, val_groups)
    return np.nonzero(~val)[0], np.nonzero(val)[0]


def _grouped_scores(pred, y, groups):
    """(MAE, RMSE) of clipped predictions after per-group averaging."""
    pred = np.clip(pred, 0, 100)
    if groups is not None:
        uniq, inv = np.unique(groups, return_inverse=True)
        counts = np.bincount(inv)[:, None]
        p = np.zeros((uniq.size, 3))
        t = np.zeros((uniq.size, 3))
        np.add.at(p, inv, pred)
        np.add.at(t, inv, y)
        pred, y = p / counts, t / counts
    err = pred - y
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err ** 2)))


def train_mlp(X, y, config: MlpConfig, seed: int = 0, groups=None):
    """Train one network with early stopping on a random validation split.

    Returns ``(model, {"mae", "rmse"})`` on the validation rows; both are NaN
    when no validation rows exist.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise TrainError("non-finite values in training features or labels")
    rng = np.random.default_rng(seed)
    g = None if groups is None else np.asarray(groups)
    tr, va = _split(X.shape[0], config.validation_split, rng, g)
    scaler = Scaler.fit("standard", X[tr])
    Xs = scaler.transform(X)
    model = MlpModel.initialize(X.shape[1], config, scaler, int(rng.integers(2 ** 31)))
    keys = list(model.trainable())
    m = {k: np.zeros_like(model.params[k[0]][k[1]]) for k in keys}
    v = {k: np.zeros_like(model.params[k[0]][k[1]]) for k in keys}
    step = 0
    best = ((np.inf, np.inf), None)
    stale = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(tr)
        for lo in range(0, order.size, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            if batch.size < 2:
                continue  # batch statistics undefined for one row
            loss, grads, cache = model.loss_and_grads(Xs[batch], y[batch], training=True, rng=rng)
            if not np.isfinite(loss):
                raise _Diverged(f"non-finite loss at epoch {epoch}")
            step += 1
            lr_t = config.learning_rate * np.sqrt(1 - ADAM_B2 ** step) / (1 - ADAM_B1 ** step)
            for k in keys:
                gk = grads[k[0]][k[1]]
                m[k] = ADAM_B1 * m[k] + (1 - ADAM_B1) * gk
                v[k] = ADAM_B2 * v[k] + (1 - ADAM_B2) * gk * gk
                model.params[k[0]][k[1]] -= lr_t * m[k] / (np.sqrt(v[k]) + ADAM_EPS)
            for p, c in zip(model.params[:-1], cache[:-1]):
                p["mean"] = BN_MOMENTUM * p["mean"] + (1 - BN_MOMENTUM) * c[5]
                p["var"] = BN_MOMENTUM * p["var"] + (1 - BN_MOMENTUM) * c[6]
        if va.size == 0:
            continue
        pred = model.raw_predict(X[va])
        if not np.all(np.isfinite(pred)):
            raise _Diverged(f"non-finite validation output at epoch {epoch}")
        score = _grouped_scores(pred, y[va], None if g is None else g[va])
        if score[0] < best[0][0]:
            best = (score, [{k: a.copy() for k, a in p.items()} for p in model.params])
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best[1] is not None:
        model.params = best[1]
    elif va.size:
        best = (_grouped_scores(model.raw_predict(X[va]), y[va], None if g is None else g[va]), None)
    if not va.size:
        return model, {"mae": float("nan"), "rmse": float("nan")}
    return model, {"mae": best[0][0], "rmse": best[0][1]}


def sample_configs(n_draws: int, seed: int, space=SEARCH_SPACE, **fixed) -> list[MlpConfig]:
    """Deterministic random draws from the hyperparameter table."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_draws):
        draw = {k: vals[int(rng.integers(len(vals)))] for k, vals in space.items()}
        draw = {k: (v.item() if hasattr(v, "item") else v) for k, v in draw.items()}
        out.append(replace(MlpConfig(**fixed), **draw))
    return out


def search_mlp(X, y, n_draws: int = 10, seed: int = 0, groups=None, **fixed):
    """Random search; returns ``(best_model, best_val_scores, best_config)``."""
    best = (None, None, None)
    for i, cfg in enumerate(sample_configs(n_draws, seed, **fixed)):
        try:
            model, score = train_mlp(X, y, cfg, seed=seed + i, groups=groups)
        except _Diverged as exc:
            log.warning("mlp draw %d (%s) discarded: %s", i, cfg, exc)
            continue
        if best[1] is None or score["mae"] < best[0]["mae"]:
            best = (score, model, cfg)
    if best[1] is None:
        raise TrainError(f"all {n_draws} mlp draws diverged")
    return best[1], best[0], best[2]
