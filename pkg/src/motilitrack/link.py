"""Frame-to-frame linking with blink memory, track filtering and drift subtraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptySample, LinkError, ParamError


@dataclass(frozen=True)
class Trajectory:
    particle_id: int
    frames: np.ndarray  # (n,) int, strictly increasing
    xy: np.ndarray  # (n, 2) float, columns x, y
    source: str = "crocker_grier"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64)
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if frames.shape[0] != xy.shape[0]:
            raise ValueError("frames and xy differ in length")
        if frames.size > 1 and np.any(np.diff(frames) <= 0):
            raise ValueError(f"track {self.particle_id}: frame indices must increase strictly")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "xy", xy)

    def __len__(self):
        return self.frames.size

    @property
    def points(self) -> list[tuple[int, float, float]]:
        return [(int(f), float(x), float(y)) for f, (x, y) in zip(self.frames, self.xy)]

    @property
    def first_frame(self) -> int:
        return int(self.frames[0])

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1])

    @property
    def total_distance(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.hypot(*np.diff(self.xy, axis=0).T).sum())


@dataclass(frozen=True)
class DriftSeries:
    frames: np.ndarray  # 0..last frame
    offsets: np.ndarray  # (n, 2) cumulative (dx, dy)


@dataclass
class _Particle:
    pid: int
    last_frame: int
    pos: np.ndarray
    frames: list = field(default_factory=list)
    coords: list = field(default_factory=list)


def _group_by_frame(spots) -> dict[int, np.ndarray]:
    """Accepts a flat iterable of Spots or per-frame lists of Spots."""
    grouped: dict[int, list] = {}
    for item in spots:
        batch = item if isinstance(item, (list, tuple)) else [item]
        for s in batch:
            grouped.setdefault(int(s.frame_index), []).append((s.x, s.y))
    return {f: np.array(v, dtype=np.float64).reshape(-1, 2) for f, v in grouped.items()}


def _components(n_src, edges):
    parent = list(range(n_src))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    by_dest: dict[int, int] = {}
    for s, d, _ in edges:
        if d in by_dest:
            ra, rb = find(s), find(by_dest[d])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        else:
            by_dest[d] = s
    groups: dict[int, list] = {}
    for s in range(n_src):
        groups.setdefault(find(s), []).append(s)
    return [g for g in groups.values()]


def _solve_exact(sources, options, penalty):
    """Branch and bound over sources; each takes one free destination or none.

    ``options[s]`` is a list of (cost, dest) sorted by cost; ``penalty[s]`` is the
    cost of leaving ``s`` unmatched. Returns {source: dest}.
    """
    best_local = [min([penalty[s]] + [c for c, _ in options[s]]) for s in sources]
    suffix = [0.0] * (len(sources) + 1)
    for i in range(len(sources) - 1, -1, -1):
        suffix[i] = suffix[i + 1] + best_local[i]
    best = [math.inf, None]
    chosen: list = [None] * len(sources)
    used: set = set()

    def recurse(i, cost):
        if cost + suffix[i] >= best[0]:
            return
        if i == len(sources):
            best[0], best[1] = cost, list(chosen)
            return
        s = sources[i]
        for c, d in options[s]:
            if d in used:
                continue
            used.add(d)
            chosen[i] = d
            recurse(i + 1, cost + c)
            used.discard(d)
        chosen[i] = None
        recurse(i + 1, cost + penalty[s])

    recurse(0, 0.0)
    return {s: d for s, d in zip(sources, best[1]) if d is not None}


def _solve_greedy(edges):
    out = {}
    taken = set()
    for cost, s, d in sorted((c, s, d) for s, d, c in edges):
        if s not in out and d not in taken:
            out[s] = d
            taken.add(d)
    return out


def link_spots(spots, search_range: float = 5.0, memory: int = 3,
               subnet_cap: int = 8, max_subnet: int = 500) -> list[Trajectory]:
    """Link per-frame spots into trajectories.

    Between consecutive frames the assignment minimizes the total squared
    displacement, with an unmatched particle costing the square of its search
    radius. Particles missing for ``g`` frames (``g <= memory``) stay eligible
    within ``search_range * (g + 1)``. Connected subnets with at most
    ``subnet_cap`` particles are solved exactly, larger ones greedily, and any
    subnet larger than ``max_subnet`` raises LinkError.
    """
    if search_range <= 0:
        raise ParamError("search_range must be positive")
    if memory < 0:
        raise ParamError("memory must be >= 0")
    by_frame = _group_by_frame(spots)
    particles: list[_Particle] = []
    active: list[_Particle] = []

    for t in sorted(by_frame):
        dest = by_frame[t]
        active = [p for p in active if t - p.last_frame - 1 <= memory]
        matches: dict[int, int] = {}
        if active and dest.shape[0]:
            radii = np.array([search_range * (t - p.last_frame) for p in active])
            tree = cKDTree(dest)
            src_pos = np.array([p.pos for p in active])
            edges = []
            for si, hits in enumerate(tree.query_ball_point(src_pos, r=radii)):
                for di in sorted(hits):
                    d2 = float(((dest[di] - src_pos[si]) ** 2).sum())
                    if d2 <= radii[si] ** 2:
                        edges.append((si, di, d2))
            if edges:
                penalty = radii ** 2
                for comp in _components(len(active), edges):
                    comp_set = set(comp)
                    sub = [e for e in edges if e[0] in comp_set]
                    if not sub:
                        continue
                    if len(comp) > max_subnet:
                        raise LinkError(f"frame {t}: subnet of {len(comp)} particles exceeds cap {max_subnet}")
                    if len(comp) <= subnet_cap:
                        options = {s: [] for s in comp}
                        for s, d, c in sub:
                            options[s].append((c, d))
                        for s in comp:
                            options[s].sort()
                        matches.update(_solve_exact(sorted(comp), options, penalty))
                    else:
                        matches.update(_solve_greedy(sub))
        taken = set(matches.values())
        for si, di in matches.items():
            p = active[si]
            p.last_frame = t
            p.pos = dest[di]
            p.frames.append(t)
            p.coords.append(dest[di])
        for di in range(dest.shape[0]):
            if di in taken:
                continue
            p = _Particle(len(particles), t, dest[di], [t], [dest[di]])
            particles.append(p)
            active.append(p)

    return [Trajectory(p.pid, np.array(p.frames), np.array(p.coords)) for p in particles]


def filter_tracks(tracks: Iterable[Trajectory], min_length: int = 25) -> list[Trajectory]:
    return [t for t in tracks if len(t) >= min_length]


def compute_drift(tracks: Sequence[Trajectory]) -> DriftSeries:
    if not tracks:
        raise EmptySample("no tracks to estimate drift from")
    last = max(t.last_frame for t in tracks)
    sums = np.zeros((last + 1, 2))
    counts = np.zeros(last + 1)
    for tr in tracks:
        consecutive = np.diff(tr.frames) == 1
        if not consecutive.any():
            continue
        steps = np.diff(tr.xy, axis=0)[consecutive]
        at = tr.frames[1:][consecutive]
        np.add.at(sums, at, steps)
        np.add.at(counts, at, 1)
    increments = np.zeros_like(sums)
    seen = counts > 0
    increments[seen] = sums[seen] / counts[seen, None]
    return DriftSeries(np.arange(last + 1), np.cumsum(increments, axis=0))


def subtract_drift(tracks: Sequence[Trajectory]) -> tuple[list[Trajectory], DriftSeries]:
    """Remove the ensemble mean frame-to-frame displacement from every track.

    A lone track is therefore made stationary: its own motion is the ensemble.
    """
    drift = compute_drift(tracks)
    out = [Trajectory(t.particle_id, t.frames, t.xy - drift.offsets[t.frames], t.source)
           for t in tracks]
    return out, drift
