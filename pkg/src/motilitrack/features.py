"""Per-track movement statistics and mean squared displacement vectors."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySample, ParamError
from .link import Trajectory

log = logging.getLogger(__name__)

CMS_WINDOWS = (5, 10, 20, 50, 80, 100, 150, 200, 250, 300, 400, 500, 750, 1000)
CMS_METRICS = ("path_length", "net_displacement")
CMS_FUNCTIONALS = ("mean", "max", "min")
CMS_DIM = len(CMS_WINDOWS) * len(CMS_METRICS) * len(CMS_FUNCTIONALS) + 2
EMSD_CONFIGS = ((2.0, 1.0), (10.0, 1.0), (10.0, 5.0))


@dataclass(frozen=True)
class CmsFeature:
    track_id: int
    values: np.ndarray

    @staticmethod
    def names() -> list[str]:
        cols = [f"{m}_w{w}_{fn}" for w in CMS_WINDOWS for m in CMS_METRICS for fn in CMS_FUNCTIONALS]
        return cols + ["total_distance", "mean_speed"]


@dataclass(frozen=True)
class MsdVector:
    kind: str  # "imsd" or "emsd"
    ref_id: int  # track id for imsd, window id for emsd
    values: np.ndarray
    window: tuple[int, int]  # (start_frame, length_frames)
    fps: float

    @property
    def lags(self) -> np.ndarray:
        return np.arange(1, self.values.size + 1)

    @property
    def lag_times(self) -> np.ndarray:
        return self.lags / self.fps


def cms(track: Trajectory) -> CmsFeature:
    """86 movement statistics for one track.

    Windows are measured in frames and slide with a hop of one frame; within
    a window, path length sums the steps between observed points and net
    displacement joins the first and last observed points. A track spanning
    fewer frames than a window contributes one window covering the whole track.
    """
    frames, xy = track.frames, track.xy
    steps = np.hypot(*np.diff(xy, axis=0).T) if len(track) > 1 else np.zeros(0)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    first, last = int(frames[0]), int(frames[-1])
    span = last - first + 1
    out = []
    for w in CMS_WINDOWS:
        if span <= w:
            lo = np.array([0])
            hi = np.array([len(track) - 1])
        else:
            starts = np.arange(first, last - w + 2)
            lo = np.searchsorted(frames, starts, side="left")
            hi = np.searchsorted(frames, starts + w - 1, side="right") - 1
            hi = np.maximum(hi, lo)
        path = cum[hi] - cum[lo]
        net = np.hypot(*(xy[hi] - xy[lo]).T)
        for series in (path, net):
            out.extend((series.mean(), series.max(), series.min()))
    total = float(cum[-1])
    duration = last - first
    out.append(total)
    out.append(total / duration if duration > 0 else 0.0)
    return CmsFeature(track.particle_id, np.asarray(out, dtype=np.float64))


def _dense(track: Trajectory, start: int, stop: int):
    """Positions on the frame grid [start, stop) with a presence mask."""
    n = stop - start
    pos = np.zeros((n, 2))
    mask = np.zeros(n, dtype=bool)
    sel = (track.frames >= start) & (track.frames < stop)
    idx = track.frames[sel] - start
    pos[idx] = track.xy[sel]
    mask[idx] = True
    return pos, mask


def _msd_raw(pos, mask, n_lags):
    """Time-averaged MSD per lag; NaN where no pair exists."""
    out = np.full(n_lags, np.nan)
    n = pos.shape[0]
    for lag in range(1, min(n_lags, n - 1) + 1):
        valid = mask[lag:] & mask[:-lag]
        if valid.any():
            d = pos[lag:][valid] - pos[:-lag][valid]
            out[lag - 1] = np.mean((d ** 2).sum(axis=1))
    return out


def _forward_fill(values):
    out = values.copy()
    last = 0.0
    for i in range(out.size):
        if np.isnan(out[i]):
            out[i] = last
        else:
            last = out[i]
    return out


def _n_lags(seconds, fps):
    n = int(round(seconds * fps))
    if n < 1:
        raise ParamError(f"{seconds} s at {fps} fps gives no lags")
    return n


def imsd(track: Trajectory, lag_max: float, fps: float) -> MsdVector:
    """Individual MSD for lags 1..lag_max*fps frames.

    Lags use frame indices, so blink gaps are respected. Lags beyond the track
    span repeat the last computed value.
    """
    n_lags = _n_lags(lag_max, fps)
    pos, mask = _dense(track, track.first_frame, track.last_frame + 1)
    values = _forward_fill(_msd_raw(pos, mask, n_lags))
    return MsdVector("imsd", track.particle_id, values,
                     (track.first_frame, track.last_frame - track.first_frame + 1), fps)


def emsd(tracks: Sequence[Trajectory], window: float, hop: float, fps: float,
         n_frames: int | None = None) -> list[MsdVector]:
    """Ensemble MSD over sliding video windows aligned to frame 0.

    Each window yields ``window * fps`` lag values; every track with at least
    one valid pair at a lag weighs equally in that lag's average. Lags with no
    pairs in any track repeat the previous value. When the video is shorter
    than one window, a single window covers the whole video.
    """
    if not tracks:
        raise EmptySample("emsd needs at least one track")
    win = _n_lags(window, fps)
    step = _n_lags(hop, fps)
    if n_frames is None:
        n_frames = max(t.last_frame for t in tracks) + 1
    if n_frames >= win:
        starts = list(range(0, n_frames - win + 1, step))
        spans = [(s, win) for s in starts]
    else:
        spans = [(0, n_frames)]
    out = []
    for wid, (start, length) in enumerate(spans):
        per_track = []
        for tr in tracks:
            if tr.last_frame < start or tr.first_frame >= start + length:
                continue
            pos, mask = _dense(tr, start, start + length)
            if mask.sum() < 2:
                continue
            per_track.append(_msd_raw(pos, mask, win))
        if not per_track:
            log.info("emsd window %d (frames %d..%d) has no tracks; skipped",
                     wid, start, start + length - 1)
            continue
        stack = np.vstack(per_track)
        counts = np.sum(~np.isnan(stack), axis=0)
        sums = np.nansum(stack, axis=0)
        ens = np.full(win, np.nan)
        ens[counts > 0] = sums[counts > 0] / counts[counts > 0]
        out.append(MsdVector("emsd", wid, _forward_fill(ens), (start, length), fps))
    return out
