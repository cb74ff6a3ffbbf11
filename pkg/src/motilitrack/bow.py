"""Bag-of-Words quantization of per-track feature vectors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BuildError, EncodeError
from .io import atomic_write_text

CODEBOOK_SIZES = (2500, 5000, 10000)
ASSIGN_COUNTS = (1, 10, 50, 100, 200, 500)
_CHUNK = 256


@dataclass(frozen=True)
class Codebook:
    dim: int
    vectors: np.ndarray  # (N, dim), standardized space
    means: np.ndarray
    stds: np.ndarray
    idf: np.ndarray
    seed: int
    assign: int = 1  # assignment count the idf statistics were gathered with

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.means) / self.stds

    def to_dict(self) -> dict:
        return {
            "dim": int(self.dim),
            "seed": int(self.seed),
            "assign": int(self.assign),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "idf": self.idf.tolist(),
            "vectors": self.vectors.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Codebook":
        dim = int(d["dim"])
        vectors = np.asarray(d["vectors"], dtype=np.float64).reshape(-1, dim)
        return cls(dim, vectors, np.asarray(d["means"], dtype=np.float64),
                   np.asarray(d["stds"], dtype=np.float64), np.asarray(d["idf"], dtype=np.float64),
                   int(d["seed"]), int(d.get("assign", 1)))

    def save(self, path) -> None:
        atomic_write_text(path, json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class BowHistogram:
    video_id: str
    counts: np.ndarray  # (N,) int
    weighted: np.ndarray  # (N,) float, tf-idf then L2-normalized


def _as_matrix(vectors, dim=None) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, dim or 0))
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def nearest(queries: np.ndarray, codebook_vectors: np.ndarray, a: int) -> np.ndarray:
    """Indices of the ``a`` nearest codebook vectors for every query row.

    Ordering is by exact Euclidean distance, ties by lower index. A BLAS pass
    narrows the candidates; survivors are re-ranked on exact differences.
    """
    n_cb = codebook_vectors.shape[0]
    out = np.empty((queries.shape[0], a), dtype=np.int64)
    cb_sq = np.einsum("ij,ij->i", codebook_vectors, codebook_vectors)
    for lo in range(0, queries.shape[0], _CHUNK):
        q = queries[lo:lo + _CHUNK]
        q_sq = np.einsum("ij,ij->i", q, q)
        approx = cb_sq[None, :] - 2.0 * q @ codebook_vectors.T + q_sq[:, None]
        if a < n_cb:
            kth = np.partition(approx, a - 1, axis=1)[:, a - 1]
        else:
            kth = approx.max(axis=1)
        # cancellation error of the expanded form scales with the squared norms
        slack = 1e-9 * (1.0 + q_sq + cb_sq.max())
        for r in range(q.shape[0]):
            cand = np.nonzero(approx[r] <= kth[r] + slack[r])[0]
            exact = ((codebook_vectors[cand] - q[r]) ** 2).sum(axis=1)
            order = np.lexsort((cand, exact))
            out[lo + r] = cand[order[:a]]
    return out


def _counts(std_vectors: np.ndarray, vectors: np.ndarray, a: int) -> np.ndarray:
    counts = np.zeros(vectors.shape[0], dtype=np.int64)
    if std_vectors.shape[0]:
        np.add.at(counts, nearest(std_vectors, vectors, a).ravel(), 1)
    return counts


def build_codebook(train_samples: Sequence, n: int, seed: int, assign: int = 1) -> Codebook:
    """Random codebook from pooled per-track training vectors.

    ``train_samples`` holds one (n_tracks, dim) array per training video. The
    standardizer is fit on the pooled vectors (zero-variance dimensions keep a
    std of 1); ``n`` standardized vectors are drawn without replacement, or with
    replacement when fewer are available. The smoothed idf
    ``ln((1 + D) / (1 + df)) + 1`` comes from encoding the training videos with
    ``assign`` nearest vectors each.
    """
    mats = [_as_matrix(s) for s in train_samples]
    mats = [m for m in mats if m.shape[0]]
    if not mats:
        raise BuildError("no training vectors to build a codebook from")
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise BuildError(f"training vectors have mixed dimensions {sorted(dims)}")
    if n < 1:
        raise BuildError("codebook size must be >= 1")
    if not 1 <= assign <= n:
        raise BuildError(f"assign must lie in [1, {n}], got {assign}")
    pooled = np.vstack(mats)
    if not np.all(np.isfinite(pooled)):
        raise BuildError("training vectors contain non-finite values")
    means = pooled.mean(axis=0)
    stds = pooled.std(axis=0)
    # detect constant columns by range: the float mean of equal values can be off by an ulp
    flat = np.ptp(pooled, axis=0) == 0
    means[flat] = pooled[0, flat]
    stds[flat] = 1.0
    rng = np.random.default_rng(seed)
    replace = pooled.shape[0] < n
    pick = rng.choice(pooled.shape[0], size=n, replace=replace)
    vectors = (pooled[pick] - means) / stds

    d = len(train_samples)
    df = np.zeros(n)
    for s in train_samples:
        m = _as_matrix(s)
        if m.shape[0]:
            df += _counts((m - means) / stds, vectors, assign) > 0
    idf = np.log((1.0 + d) / (1.0 + df)) + 1.0
    return Codebook(pooled.shape[1], vectors, means, stds, idf, int(seed), int(assign))


def encode(sample_vectors, codebook: Codebook, a: int, video_id: str = "") -> BowHistogram:
    """Histogram of the ``a`` nearest codebook vectors per track, then tf-idf and L2."""
    if not 1 <= a <= codebook.size:
        raise EncodeError(f"assign count {a} outside [1, {codebook.size}]")
    mat = _as_matrix(sample_vectors, codebook.dim)
    if mat.shape[0] and mat.shape[1] != codebook.dim:
        raise EncodeError(f"vector dim {mat.shape[1]} does not match codebook dim {codebook.dim}")
    counts = _counts(codebook.standardize(mat), codebook.vectors, a) if mat.shape[0] else \
        np.zeros(codebook.size, dtype=np.int64)
    weighted = counts * codebook.idf
    norm = np.linalg.norm(weighted)
    if norm > 0:
        weighted = weighted / norm
    return BowHistogram(video_id, counts, weighted)
