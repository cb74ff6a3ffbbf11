"""Delimited file formats shared by the CLI and the experiment runner."""

from __future__ import annotations

import csv
import hashlib
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestError
from .link import Trajectory
from .locate import Spot

LABEL_COLUMNS = ("progressive", "non_progressive", "immotile")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@contextmanager
def atomic_open(path, mode="w", **kw):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        with open(tmp, mode, **kw) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path, text: str) -> None:
    with atomic_open(path, "w", newline="") as fh:
        fh.write(text)


def _reader(path):
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"{path}: no such file")
    fh = open(path, newline="")
    rows = csv.reader(fh)
    header = next(rows, None)
    if header is None:
        fh.close()
        raise IngestError(f"{path}: empty file")
    return fh, header, rows


def _require(path, header, columns):
    missing = [c for c in columns if c not in header]
    if missing:
        raise IngestError(f"{path}: missing columns {missing}")
    return [header.index(c) for c in columns]


def _num(path, lineno, text, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise IngestError(f"{path}:{lineno}: bad value {text!r}") from None


def _fmt(v: float) -> str:
    return repr(float(v))


# spots

def write_spots(path, spots) -> None:
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "x", "y", "mass", "size"])
        for s in spots:
            w.writerow([s.frame_index, f"{s.x:.4f}", f"{s.y:.4f}", f"{s.mass:.4f}", f"{s.size:.4f}"])


def read_spots(path) -> list[Spot]:
    fh, header, rows = _reader(path)
    with fh:
        idx = _require(path, header, ["frame", "x", "y", "mass", "size"])
        out = []
        for lineno, row in enumerate(rows, start=2):
            f, x, y, m, s = (row[i] for i in idx)
            out.append(Spot(_num(path, lineno, f, int), _num(path, lineno, x), _num(path, lineno, y),
                            _num(path, lineno, m), _num(path, lineno, s)))
    out.sort(key=lambda s: (s.frame_index, s.y, s.x))
    return out


# tracks

def write_tracks(path, tracks) -> None:
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["particle", "frame", "x", "y"])
        for tr in sorted(tracks, key=lambda t: t.particle_id):
            for f, (x, y) in zip(tr.frames, tr.xy):
                w.writerow([tr.particle_id, int(f), _fmt(x), _fmt(y)])


def read_tracks(path, source: str = "crocker_grier") -> list[Trajectory]:
    fh, header, rows = _reader(path)
    with fh:
        idx = _require(path, header, ["particle", "frame", "x", "y"])
        per: dict[int, list] = {}
        for lineno, row in enumerate(rows, start=2):
            p, f, x, y = (row[i] for i in idx)
            per.setdefault(_num(path, lineno, p, int), []).append(
                (_num(path, lineno, f, int), _num(path, lineno, x), _num(path, lineno, y)))
    out = []
    for pid in sorted(per):
        pts = sorted(per[pid])
        frames = np.array([p[0] for p in pts])
        if np.any(np.diff(frames) <= 0):
            raise IngestError(f"{path}: particle {pid} repeats a frame")
        out.append(Trajectory(pid, frames, np.array([p[1:] for p in pts]), source))
    return out


# feature rows: video_id, kind, ref_id, v0..v{d-1}

def write_features(path, rows) -> None:
    """``rows`` yields (video_id, kind, ref_id, values)."""
    rows = list(rows)
    dim = max((len(r[3]) for r in rows), default=0)
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "kind", "ref_id"] + [f"v{i}" for i in range(dim)])
        for vid, kind, ref, values in rows:
            if len(values) != dim:
                raise ValueError(f"{vid}/{kind}/{ref}: dim {len(values)} != {dim}")
            w.writerow([vid, kind, int(ref)] + [_fmt(v) for v in values])


def read_features(path, kind: str | None = None) -> dict[str, tuple[str, np.ndarray, np.ndarray]]:
    """Feature rows grouped per video, in file order.

    Returns ``{video_id: (kind, ref_ids, matrix)}``. A file holding several
    kinds must be narrowed with ``kind``.
    """
    fh, header, rows = _reader(path)
    with fh:
        if header[:3] != ["video_id", "kind", "ref_id"]:
            raise IngestError(f"{path}: header must start with video_id,kind,ref_id")
        dim = len(header) - 3
        per: dict[str, list] = {}
        kinds = set()
        for lineno, row in enumerate(rows, start=2):
            if len(row) != dim + 3:
                raise IngestError(f"{path}:{lineno}: expected {dim + 3} fields, got {len(row)}")
            if kind is not None and row[1] != kind:
                continue
            kinds.add(row[1])
            vals = [_num(path, lineno, v) for v in row[3:]]
            per.setdefault(row[0], []).append((_num(path, lineno, row[2], int), vals))
    if len(kinds) > 1:
        raise IngestError(f"{path}: mixed feature kinds {sorted(kinds)}; pick one with --kind")
    k = kinds.pop() if kinds else (kind or "")
    return {vid: (k, np.array([r[0] for r in items], dtype=np.int64),
                  np.array([r[1] for r in items], dtype=np.float64).reshape(len(items), dim))
            for vid, items in per.items()}


# labels and folds

def write_labels(path, labels: dict) -> None:
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", *LABEL_COLUMNS])
        for vid in sorted(labels):
            w.writerow([vid] + [_fmt(v) for v in np.asarray(labels[vid], dtype=np.float64)])


def read_labels(path) -> dict[str, np.ndarray]:
    fh, header, rows = _reader(path)
    with fh:
        idx = _require(path, header, ["video_id", *LABEL_COLUMNS])
        out = {}
        for lineno, row in enumerate(rows, start=2):
            vals = np.array([_num(path, lineno, row[i]) for i in idx[1:]])
            if np.any(vals < 0) or np.any(vals > 100):
                raise IngestError(f"{path}:{lineno}: label outside [0, 100]")
            out[row[idx[0]]] = vals
    return out


def write_folds(path, assignments: dict) -> None:
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "fold"])
        for vid in sorted(assignments):
            w.writerow([vid, int(assignments[vid])])


def read_folds(path) -> dict[str, int]:
    if not Path(path).is_file():
        raise ConfigError(f"fold file {path} does not exist")
    fh, header, rows = _reader(path)
    with fh:
        idx = _require(path, header, ["video_id", "fold"])
        out = {}
        for lineno, row in enumerate(rows, start=2):
            vid = row[idx[0]]
            if vid in out:
                raise IngestError(f"{path}:{lineno}: video {vid} assigned twice")
            out[vid] = _num(path, lineno, row[idx[1]], int)
    return out


def write_predictions(path, ids, preds) -> None:
    with atomic_open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", *LABEL_COLUMNS])
        for vid, p in zip(ids, preds):
            w.writerow([vid] + [f"{v:.6f}" for v in p])
