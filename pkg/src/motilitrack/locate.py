"""Particle localization: dilation maxima, brightness percentile, centroid refinement."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ParamError
from .ingest import FilteredFrame, FrameSequence, bandpass

MAX_REFINE_ITER = 10


@dataclass(frozen=True)
class Spot:
    frame_index: int
    x: float
    y: float
    mass: float
    size: float


def _validate(diameter, percentile=None, minmass=None):
    if int(diameter) != diameter or diameter < 3 or diameter % 2 == 0:
        raise ParamError(f"diameter must be an odd integer >= 3, got {diameter}")
    if percentile is not None and not 0 < percentile < 1:
        raise ParamError(f"percentile must lie in (0, 1), got {percentile}")
    if minmass is not None and minmass < 0:
        raise ParamError(f"minmass must be non-negative, got {minmass}")


def _pixels(frame):
    if isinstance(frame, FilteredFrame):
        return frame.pixels, frame.frame_index
    return np.asarray(frame, dtype=np.float64), 0


def find_maxima(frame, diameter: int = 11, percentile: float = 0.30) -> list[tuple[int, int]]:
    """Integer (row, col) positions of local brightness maxima.

    A pixel is a candidate when it equals the grayscale dilation of the image
    (square element of side ``diameter``) and lies in the upper ``percentile``
    of the image's pixel brightness. Candidates closer than ``diameter`` to a
    brighter one are dropped; ties go to the lower (row, col).
    """
    _validate(diameter, percentile)
    image, _ = _pixels(frame)
    if image.size == 0 or not np.any(image > 0):
        return []
    dilated = ndimage.maximum_filter(image, size=int(diameter), mode="nearest")
    threshold = np.quantile(image, 1.0 - percentile)
    mask = (image == dilated) & (image > 0) & (image >= threshold)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return []
    values = image[rows, cols]
    order = np.lexsort((cols, rows, -values))
    rows, cols = rows[order], cols[order]
    if rows.size == 1:
        return [(int(rows[0]), int(cols[0]))]

    pts = np.column_stack([rows, cols]).astype(np.float64)
    tree = cKDTree(pts)
    suppressed = np.zeros(rows.size, dtype=bool)
    keep = []
    for i in range(rows.size):
        if suppressed[i]:
            continue
        keep.append((int(rows[i]), int(cols[i])))
        for j in tree.query_ball_point(pts[i], r=diameter):
            if j != i and np.hypot(*(pts[j] - pts[i])) < diameter:
                suppressed[j] = True
    return keep


def _mask_offsets(radius: int):
    dy, dx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    inside = dy ** 2 + dx ** 2 <= radius ** 2
    return dy[inside], dx[inside]


def _refine_many(image, rows, cols, radius):
    """Vectorized centroid refinement; returns (y, x, mass, size) arrays for survivors."""
    h, w = image.shape
    dy, dx = _mask_offsets(radius)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def interior(r, c):
        return (r >= radius) & (r <= h - 1 - radius) & (c >= radius) & (c <= w - 1 - radius)

    alive = interior(rows, cols)
    rows, cols = rows[alive], cols[alive]
    cy = np.zeros(rows.size)
    cx = np.zeros(rows.size)
    pending = np.ones(rows.size, dtype=bool)
    valid = np.ones(rows.size, dtype=bool)
    for _ in range(MAX_REFINE_ITER):
        idx = np.nonzero(pending)[0]
        if idx.size == 0:
            break
        patch = image[rows[idx, None] + dy, cols[idx, None] + dx]
        m = patch.sum(axis=1)
        zero = m <= 0
        valid[idx[zero]] = False
        pending[idx[zero]] = False
        idx, patch, m = idx[~zero], patch[~zero], m[~zero]
        oy = (patch * dy).sum(axis=1) / m
        ox = (patch * dx).sum(axis=1) / m
        cy[idx], cx[idx] = oy, ox
        moved = (np.abs(oy) > 0.5) | (np.abs(ox) > 0.5)
        pending[idx[~moved]] = False
        mv = idx[moved]
        if mv.size:
            new_r = rows[mv] + np.rint(cy[mv]).astype(np.int64)
            new_c = cols[mv] + np.rint(cx[mv]).astype(np.int64)
            ok = interior(new_r, new_c)
            # recentring would cross the border: keep the last in-bounds estimate
            pending[mv[~ok]] = False
            rows[mv[ok]], cols[mv[ok]] = new_r[ok], new_c[ok]
    rows, cols = rows[valid], cols[valid]
    empty = np.zeros(0)
    if rows.size == 0:
        return empty, empty, empty, empty
    # final estimate from the settled window
    patch = image[rows[:, None] + dy, cols[:, None] + dx]
    mass = patch.sum(axis=1)
    nz = mass > 0
    rows, cols, patch, mass = rows[nz], cols[nz], patch[nz], mass[nz]
    if rows.size == 0:
        return empty, empty, empty, empty
    cy = (patch * dy).sum(axis=1) / mass
    cx = (patch * dx).sum(axis=1) / mass
    r2 = (dy[None, :] - cy[:, None]) ** 2 + (dx[None, :] - cx[:, None]) ** 2
    size = np.sqrt((patch * r2).sum(axis=1) / mass)
    return rows + cy, cols + cx, mass, size


def refine(frame, candidate: tuple[int, int], diameter: int = 11) -> Spot | None:
    """Brightness-weighted centroid around one (row, col) candidate.

    Returns None when the candidate sits within ``diameter // 2`` of the border
    or the mask holds no intensity.
    """
    _validate(diameter)
    image, frame_index = _pixels(frame)
    y, x, mass, size = _refine_many(image, [candidate[0]], [candidate[1]], int(diameter) // 2)
    if y.size == 0:
        return None
    return Spot(frame_index, float(x[0]), float(y[0]), float(mass[0]), float(size[0]))


def locate_frame(frame, diameter: int = 11, minmass: float = 900.0,
                 percentile: float = 0.30) -> list[Spot]:
    """find_maxima -> refine -> mass >= minmass, sorted by (y, x)."""
    _validate(diameter, percentile, minmass)
    image, frame_index = _pixels(frame)
    cands = find_maxima(image, diameter, percentile)
    if not cands:
        return []
    rows, cols = np.array(cands).T
    y, x, mass, size = _refine_many(image, rows, cols, int(diameter) // 2)
    keep = mass >= minmass
    y, x, mass, size = y[keep], x[keep], mass[keep], size[keep]
    order = np.lexsort((x, y))
    return [Spot(frame_index, float(x[i]), float(y[i]), float(mass[i]), float(size[i]))
            for i in order]


def locate_sequence(seq: FrameSequence, diameter: int = 11, minmass: float = 900.0,
                    percentile: float = 0.30, noise_sigma: float = 1.0,
                    threads: int = 1) -> list[list[Spot]]:
    """Bandpass and locate every frame; results are returned in frame order."""
    _validate(diameter, percentile, minmass)

    def one(i):
        filtered = bandpass(seq.frames[i], diameter, noise_sigma, frame_index=i)
        return locate_frame(filtered, diameter, minmass, percentile)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(len(seq))))
    return [one(i) for i in range(len(seq))]
