from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCALERS = ("none", "standard", "minmax")


@dataclass(frozen=True)
class Scaler:
    kind: str
    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, kind: str, X: np.ndarray) -> "Scaler":
        X = np.asarray(X, dtype=np.float64)
        d = X.shape[1]
        if kind == "none":
            return cls(kind, np.zeros(d), np.ones(d))
        if kind == "standard":
            offset, scale = X.mean(axis=0), X.std(axis=0)
        elif kind == "minmax":
            offset = X.min(axis=0)
            scale = X.max(axis=0) - offset
        else:
            raise ValueError(f"unknown scaler {kind!r}; expected one of {SCALERS}")
        scale = np.where(scale > 0, scale, 1.0)
        return cls(kind, offset, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.offset) / self.scale

    def to_dict(self) -> dict:
        return {"kind": self.kind, "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(d["kind"], np.asarray(d["offset"], dtype=np.float64),
                   np.asarray(d["scale"], dtype=np.float64))
