"""Three-fold cross-validation with per-video aggregation and MAE/RMSE reporting."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bow
from .errors import ConfigError, EvalError, MetricError
from .model import (C_GRID, DEFAULT_EPSILON, SCALERS, TARGETS, aggregate_by_video, predict,
                    search_mlp, select_svr, train_svr)
from .model.svr import kfold_indices

log = logging.getLogger(__name__)

AGGREGATIONS = ("bow", "direct", "mean")
MODELS = ("svr", "mlp", "zeror")


@dataclass(frozen=True)
class FoldSplit:
    assignments: dict  # video_id -> fold index (1-based)

    def __post_init__(self):
        if not self.assignments:
            raise ConfigError("fold split is empty")
        folds = sorted(set(self.assignments.values()))
        if folds != list(range(1, len(folds) + 1)) or len(folds) < 2:
            raise ConfigError(f"fold indices must be 1..K with K >= 2 and no empty fold, got {folds}")

    @property
    def folds(self) -> list[int]:
        return sorted(set(self.assignments.values()))

    def test_ids(self, k: int) -> list[str]:
        return sorted(v for v, f in self.assignments.items() if f == k)

    def train_ids(self, k: int) -> list[str]:
        return sorted(v for v, f in self.assignments.items() if f != k)


def make_folds(video_ids, subjects=None, n_folds: int = 3, seed: int = 0) -> FoldSplit:
    """Subject-grouped split: all videos of one subject share a fold."""
    video_ids = list(video_ids)
    subjects = video_ids if subjects is None else list(subjects)
    if len(subjects) != len(video_ids):
        raise ConfigError("subjects must align with video_ids")
    uniq = sorted(set(subjects))
    if len(uniq) < n_folds:
        raise ConfigError(f"{len(uniq)} subjects cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    order = [uniq[i] for i in rng.permutation(len(uniq))]
    fold_of = {s: i % n_folds + 1 for i, s in enumerate(order)}
    return FoldSplit({v: fold_of[s] for v, s in zip(video_ids, subjects)})


def _aligned(pred, truth):
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise MetricError(f"prediction shape {p.shape} != truth shape {t.shape}")
    if p.size == 0:
        raise MetricError("no samples to score")
    return p, t


def mae(pred, truth) -> float:
    p, t = _aligned(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, truth) -> float:
    p, t = _aligned(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def _scores(pred, truth) -> dict:
    out = {"mae": mae(pred, truth), "rmse": rmse(pred, truth), "per_target": {}}
    for j, name in enumerate(TARGETS):
        out["per_target"][name] = {"mae": mae(pred[:, j], truth[:, j]), "rmse": rmse(pred[:, j], truth[:, j])}
    return out


@dataclass(frozen=True)
class PipelineSpec:
    """Everything that turns per-video feature sets into predictions."""

    aggregation: str = "bow"  # bow: histogram per video; direct: one row per vector; mean: averaged vector
    codebook_size: int = 10000
    assign: int = 10
    model: str = "svr"
    scalers: tuple = SCALERS
    C: tuple = C_GRID
    epsilon: float = DEFAULT_EPSILON
    internal_folds: int = 5
    mlp_draws: int = 10
    mlp_max_epochs: int = 300
    mlp_patience: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.aggregation == "bow" and not 1 <= self.assign <= self.codebook_size:
            raise ConfigError("assign must lie in [1, codebook_size]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scalers"] = list(self.scalers)
        d["C"] = [float(c) for c in self.C]
        return d


def fingerprint(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


@dataclass
class EvalReport:
    config: dict
    folds: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.config)

    def to_dict(self) -> dict:
        return {"fingerprint": self.fingerprint, "config": self.config, "folds": self.folds, "mean": self.mean}

    def to_json(self) -> str:
        return json.dumps(json_safe(self.to_dict()), sort_keys=True, indent=2) + "\n"


def json_safe(obj):
    """JSON-safe copy: NaN becomes null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _design(samples, ids, spec: PipelineSpec, codebook=None):
    """Rows, row groups (video ids) for the given videos."""
    rows, groups = [], []
    for vid in ids:
        mat = samples[vid]
        if spec.aggregation == "bow":
            rows.append(bow.encode(mat, codebook, spec.assign, vid).weighted[None, :])
            groups.append(vid)
        elif spec.aggregation == "mean":
            if mat.shape[0] == 0:
                raise EvalError(f"video {vid} has no feature vectors")
            rows.append(mat.mean(axis=0, keepdims=True))
            groups.append(vid)
        else:
            if mat.shape[0] == 0:
                raise EvalError(f"video {vid} has no feature vectors")
            rows.append(mat)
            groups.extend([vid] * mat.shape[0])
    return np.vstack(rows), np.array(groups)


class _ZeroR:
    kind = "zeror"

    def __init__(self, mean, n_features):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.n_features = n_features

    def decision_function(self, X):
        return np.tile(self.mean, (X.shape[0], 1))


def _zeror_val(Y, groups, n_splits, seed):
    pred = np.zeros_like(Y)
    for tr, te in kfold_indices(groups, n_splits, seed):
        pred[te] = Y[tr].mean(axis=0)
    _, p = aggregate_by_video(pred, groups)
    _, t = aggregate_by_video(Y, groups)
    return {"mae": mae(p, t), "rmse": rmse(p, t)}


def _fit(X, Y, groups, spec: PipelineSpec):
    if spec.model == "zeror":
        return _ZeroR(Y.mean(axis=0), X.shape[1]), _zeror_val(Y, groups, spec.internal_folds, spec.seed), {}
    if spec.model == "svr":
        scaler, C, cv_mae, cv_rmse = select_svr(X, Y, spec.scalers, spec.C, spec.epsilon,
                                                spec.internal_folds, spec.seed, groups)
        model = train_svr(X, Y, scaler, C, spec.epsilon, seed=spec.seed)
        return model, {"mae": cv_mae, "rmse": cv_rmse}, {"scaler": scaler, "C": C}
    model, scores, cfg = search_mlp(X, Y, spec.mlp_draws, spec.seed, groups,
                                    max_epochs=spec.mlp_max_epochs, patience=spec.mlp_patience)
    return model, scores, asdict(cfg)


def _run_fold(k, samples, labels, folds: FoldSplit, spec: PipelineSpec, baseline: bool):
    train_ids, test_ids = folds.train_ids(k), folds.test_ids(k)
    if set(train_ids) & set(test_ids):
        raise EvalError(f"fold {k}: train and test videos overlap")
    codebook = None
    if spec.aggregation == "bow":
        # seeded independently of k so that relabelling folds cannot change results
        codebook = bow.build_codebook([samples[v] for v in train_ids], spec.codebook_size,
                                      spec.seed, spec.assign)
    X, groups = _design(samples, train_ids, spec, codebook)
    Y = np.array([labels[g] for g in groups])
    model, val, selected = _fit(X, Y, groups, spec)

    Xt, gt = _design(samples, test_ids, spec, codebook)
    ids, pred = aggregate_by_video(predict(model, Xt), gt)
    truth = np.array([labels[v] for v in ids])
    entry = {
        "fold": k,
        "train_ids": train_ids,
        "test_ids": test_ids,
        "selected": selected,
        "val": val,
        "eval": _scores(pred, truth),
        "predictions": {v: p.tolist() for v, p in zip(ids, pred)},
    }
    if baseline:
        zero = np.tile(np.array([labels[v] for v in train_ids]).mean(axis=0), (len(ids), 1))
        entry["baseline"] = {"mae": mae(zero, truth), "rmse": rmse(zero, truth)}
    return entry, model, codebook


def run_cv(samples: dict, labels: dict, folds: FoldSplit, spec: PipelineSpec,
           baseline: bool = True, threads: int = 1, extra_config: dict | None = None,
           on_fold=None) -> EvalReport:
    """Train on K-1 folds, evaluate on the held-out fold, for every fold.

    ``samples`` maps video id to its (n_vectors, dim) feature matrix; every
    fitted object (codebook, idf, scaler, model) sees training-fold videos only,
    and each fold entry records which videos those were. ``on_fold`` receives
    ``(k, model, codebook)`` after each fold, e.g. to persist artifacts.
    """
    for vid in folds.assignments:
        if vid not in labels:
            raise EvalError(f"no label for video {vid}")
        if vid not in samples:
            raise EvalError(f"no features for video {vid}")
    config = {"pipeline": spec.to_dict(), **(extra_config or {})}

    def one(k):
        return _run_fold(k, samples, labels, folds, spec, baseline)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, folds.folds))
    else:
        results = [one(k) for k in folds.folds]
    report = EvalReport(config)
    for k, (entry, model, codebook) in zip(folds.folds, results):
        report.folds.append(entry)
        if on_fold is not None:
            on_fold(k, model, codebook)
    report.mean = _mean_of_folds(report.folds)
    return report


def _mean_of_folds(entries) -> dict:
    def avg(get):
        vals = [get(e) for e in entries]
        if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in vals):
            return float("nan")
        return math.fsum(vals) / len(vals)

    out = {
        "val_mae": avg(lambda e: e["val"]["mae"]),
        "val_rmse": avg(lambda e: e["val"]["rmse"]),
        "eval_mae": avg(lambda e: e["eval"]["mae"]),
        "eval_rmse": avg(lambda e: e["eval"]["rmse"]),
        "per_target": {t: {m: avg(lambda e, t=t, m=m: e["eval"]["per_target"][t][m]) for m in ("mae", "rmse")}
                       for t in TARGETS},
    }
    if all("baseline" in e for e in entries):
        out["baseline_mae"] = avg(lambda e: e["baseline"]["mae"])
        out["baseline_rmse"] = avg(lambda e: e["baseline"]["rmse"])
    return out
