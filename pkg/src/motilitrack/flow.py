"""Shi-Tomasi corners tracked with pyramidal Lucas-Kanade optical flow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ParamError
from .ingest import FrameSequence
from .link import Trajectory

_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class FlowParams:
    max_corners: int = 100
    min_distance: float = 10.0
    block_size: int = 10
    quality_level: float = 0.01
    lk_window: int = 15
    pyramid_levels: int = 2
    fb_error_max: float = 1.0
    max_iterations: int = 20
    epsilon: float = 0.01  # px; per-level convergence threshold
    min_eigen: float = 1e-4  # mean min-eigenvalue below which a window is untrackable

    def __post_init__(self):
        if self.max_corners < 1 or self.min_distance < 1 or self.block_size < 1:
            raise ParamError("max_corners, min_distance and block_size must be >= 1")
        if not 0 < self.quality_level < 1:
            raise ParamError(f"quality_level must lie in (0, 1), got {self.quality_level}")
        if self.lk_window < 3 or self.pyramid_levels < 0 or self.fb_error_max <= 0:
            raise ParamError("lk_window >= 3, pyramid_levels >= 0 and fb_error_max > 0 required")


def _min_eigen_response(image, block_size):
    img = np.asarray(image, dtype=np.float64)
    gx = ndimage.sobel(img, axis=1, mode="reflect") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="reflect") / 8.0
    a = ndimage.uniform_filter(gx * gx, block_size, mode="reflect")
    b = ndimage.uniform_filter(gx * gy, block_size, mode="reflect")
    c = ndimage.uniform_filter(gy * gy, block_size, mode="reflect")
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def detect_corners(frame, params: FlowParams = FlowParams(), exclude=None) -> list[tuple[float, float]]:
    """Good features to track, as (x, y) pixel positions, strongest first.

    ``exclude`` lists points whose ``min_distance`` neighbourhood is off-limits.
    """
    resp = _min_eigen_response(frame, params.block_size)
    top = resp.max()
    if not top > 0:
        return []
    local_max = resp == ndimage.maximum_filter(resp, size=3, mode="nearest")
    rows, cols = np.nonzero(local_max & (resp >= params.quality_level * top) & (resp > 0))
    if rows.size == 0:
        return []
    order = np.lexsort((cols, rows, -resp[rows, cols]))
    pts = np.column_stack([cols[order], rows[order]]).astype(np.float64)
    if exclude is not None and len(exclude):
        near = cKDTree(np.asarray(exclude, dtype=np.float64).reshape(-1, 2))
        d, _ = near.query(pts)
        pts = pts[d >= params.min_distance]
    kept: list[np.ndarray] = []
    tree_pts = np.empty((0, 2))
    for p in pts:
        if len(kept) >= params.max_corners:
            break
        if tree_pts.shape[0] and np.min(np.hypot(*(tree_pts - p).T)) < params.min_distance:
            continue
        kept.append(p)
        tree_pts = np.vstack([tree_pts, p])
    return [(float(x), float(y)) for x, y in kept]


def _pyr_down(img):
    s = ndimage.correlate1d(img, _PYR_KERNEL, axis=0, mode="reflect")
    s = ndimage.correlate1d(s, _PYR_KERNEL, axis=1, mode="reflect")
    return s[::2, ::2]


def _gradients(img):
    smooth = np.array([3.0, 10.0, 3.0]) / 16.0
    deriv = np.array([-0.5, 0.0, 0.5])
    gx = ndimage.correlate1d(ndimage.correlate1d(img, smooth, axis=0, mode="reflect"), deriv, axis=1, mode="reflect")
    gy = ndimage.correlate1d(ndimage.correlate1d(img, smooth, axis=1, mode="reflect"), deriv, axis=0, mode="reflect")
    return gx, gy


def build_pyramid(frame, levels: int):
    """[(image, gx, gy)] from full resolution (level 0) to the coarsest."""
    img = np.asarray(frame, dtype=np.float64)
    out = []
    for level in range(levels + 1):
        if level:
            img = _pyr_down(img)
        out.append((img, *_gradients(img)))
    return out


def _sample(img, x, y):
    return ndimage.map_coordinates(img, [y.ravel(), x.ravel()], order=1, mode="nearest").reshape(x.shape)


def _lk(prev_pyr, next_pyr, pts, params):
    """One-directional pyramidal LK. Returns (new_pts, ok)."""
    n = pts.shape[0]
    half = params.lk_window // 2
    oy, ox = np.mgrid[-half:half + 1, -half:half + 1]
    ox, oy = ox.ravel().astype(np.float64), oy.ravel().astype(np.float64)
    m = ox.size
    ok = np.ones(n, dtype=bool)
    guess = np.zeros((n, 2))
    levels = len(prev_pyr) - 1
    for level in range(levels, -1, -1):
        img, gx, gy = prev_pyr[level]
        nxt = next_pyr[level][0]
        scale = 2.0 ** level
        px = pts[:, 0:1] / scale + ox
        py = pts[:, 1:2] / scale + oy
        I = _sample(img, px, py)
        Ix = _sample(gx, px, py)
        Iy = _sample(gy, px, py)
        a = (Ix * Ix).sum(1)
        b = (Ix * Iy).sum(1)
        c = (Iy * Iy).sum(1)
        det = a * c - b * b
        min_eig = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)
        ok &= (min_eig / m >= params.min_eigen) & (det > 0)
        safe_det = np.where(det > 0, det, 1.0)
        v = np.zeros((n, 2))
        active = ok.copy()
        for _ in range(params.max_iterations):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            qx = px[idx] + guess[idx, 0:1] + v[idx, 0:1]
            qy = py[idx] + guess[idx, 1:2] + v[idx, 1:2]
            diff = I[idx] - _sample(nxt, qx, qy)
            bx = (diff * Ix[idx]).sum(1)
            by = (diff * Iy[idx]).sum(1)
            dx = (c[idx] * bx - b[idx] * by) / safe_det[idx]
            dy = (a[idx] * by - b[idx] * bx) / safe_det[idx]
            v[idx, 0] += dx
            v[idx, 1] += dy
            active[idx[np.hypot(dx, dy) < params.epsilon]] = False
        guess = guess + v
        if level:
            guess *= 2.0
    new = pts + guess
    h, w = prev_pyr[0][0].shape
    ok &= np.all(np.isfinite(new), axis=1)
    ok &= (new[:, 0] >= 0) & (new[:, 0] <= w - 1) & (new[:, 1] >= 0) & (new[:, 1] <= h - 1)
    return new, ok


def lk_step(prev_frame, next_frame, points, params: FlowParams = FlowParams(),
            prev_pyr=None, next_pyr=None):
    """Track points from one frame to the next with a forward-backward check.

    Returns ``(new_points, ok)``; ``new_points[i]`` is meaningful only where
    ``ok[i]`` holds. A point is lost when its gradient matrix is singular, it
    leaves the frame, or tracking back lands farther than ``fb_error_max``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return pts.copy(), np.zeros(0, dtype=bool)
    if prev_pyr is None:
        prev_pyr = build_pyramid(prev_frame, params.pyramid_levels)
    if next_pyr is None:
        next_pyr = build_pyramid(next_frame, params.pyramid_levels)
    fwd, ok_f = _lk(prev_pyr, next_pyr, pts, params)
    back, ok_b = _lk(next_pyr, prev_pyr, np.where(ok_f[:, None], fwd, pts), params)
    fb = np.hypot(*(back - pts).T)
    return fwd, ok_f & ok_b & (fb <= params.fb_error_max)


def track_lk(sequence: FrameSequence, params: FlowParams = FlowParams(),
             redetect_interval: int = 5, min_length: int = 25) -> list[Trajectory]:
    """Follow corners through the sequence, topping up every ``redetect_interval`` frames."""
    if redetect_interval < 1:
        raise ParamError("redetect_interval must be >= 1")
    frames = sequence.frames
    finished = []
    active: list[dict] = []
    next_id = 0

    def start(points, t):
        nonlocal next_id
        for x, y in points:
            active.append({"id": next_id, "frames": [t], "xy": [(x, y)]})
            next_id += 1

    start(detect_corners(frames[0], params), 0)
    prev_pyr = build_pyramid(frames[0], params.pyramid_levels)
    for t in range(1, len(frames)):
        cur_pyr = build_pyramid(frames[t], params.pyramid_levels)
        if active:
            pts = np.array([tr["xy"][-1] for tr in active])
            new, ok = lk_step(None, None, pts, params, prev_pyr, cur_pyr)
            still = []
            for tr, p, good in zip(active, new, ok):
                if good:
                    tr["frames"].append(t)
                    tr["xy"].append((float(p[0]), float(p[1])))
                    still.append(tr)
                else:
                    finished.append(tr)
            active = still
        if t % redetect_interval == 0:
            current = [tr["xy"][-1] for tr in active]
            start(detect_corners(frames[t], params, exclude=current), t)
        prev_pyr = cur_pyr
    finished.extend(active)
    finished.sort(key=lambda tr: tr["id"])
    return [Trajectory(tr["id"], np.array(tr["frames"]), np.array(tr["xy"]), "lucas_kanade")
            for tr in finished if len(tr["frames"]) >= min_length]
