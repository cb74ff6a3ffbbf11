"""Regression heads for the three motility percentages."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import PredictError
from ..io import atomic_write_text
from .mlp import SEARCH_SPACE, MlpConfig, MlpModel, sample_configs, search_mlp, train_mlp
from .scaling import SCALERS, Scaler
from .svr import C_GRID, DEFAULT_EPSILON, SvrModel, select_svr, train_svr

FORMAT_VERSION = 1
TARGETS = ("progressive", "non_progressive", "immotile")

__all__ = [
    "C_GRID", "DEFAULT_EPSILON", "FORMAT_VERSION", "MlpConfig", "MlpModel", "MotilityLabel",
    "SCALERS", "SEARCH_SPACE", "Scaler", "SvrModel", "TARGETS", "aggregate_by_video",
    "load_model", "predict", "sample_configs", "save_model", "search_mlp", "select_svr",
    "train_mlp", "train_svr",
]


@dataclass(frozen=True)
class MotilityLabel:
    progressive: float
    non_progressive: float
    immotile: float

    def __post_init__(self):
        for name in TARGETS:
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} = {v} outside [0, 100]")

    def as_array(self) -> np.ndarray:
        return np.array([self.progressive, self.non_progressive, self.immotile])

    @classmethod
    def from_array(cls, a) -> "MotilityLabel":
        return cls(*(float(v) for v in a))

    def sums_to_100(self, tol: float = 0.5) -> bool:
        return abs(self.progressive + self.non_progressive + self.immotile - 100.0) <= tol


def predict(model, X) -> np.ndarray:
    """Three-output prediction per row, clipped to [0, 100]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise PredictError(f"feature dim {X.shape[1]} does not match model dim {model.n_features}")
    return np.clip(model.decision_function(X), 0.0, 100.0)


def aggregate_by_video(pred: np.ndarray, video_ids) -> tuple[list[str], np.ndarray]:
    """Mean of row predictions per video, videos in order of first appearance."""
    order: dict[str, list[int]] = {}
    for i, vid in enumerate(video_ids):
        order.setdefault(str(vid), []).append(i)
    ids = list(order)
    return ids, np.array([pred[rows].mean(axis=0) for rows in order.values()]).reshape(-1, 3)


def save_model(model, path) -> None:
    doc = {"format_version": FORMAT_VERSION, "kind": model.kind, **model.to_dict()}
    atomic_write_text(path, json.dumps(doc, sort_keys=True))


def load_model(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise PredictError(f"{path}: unsupported model format {doc.get('format_version')!r}")
    kinds = {"svr": SvrModel, "mlp": MlpModel}
    if doc.get("kind") not in kinds:
        raise PredictError(f"{path}: unknown model kind {doc.get('kind')!r}")
    return kinds[doc["kind"]].from_dict(doc)
