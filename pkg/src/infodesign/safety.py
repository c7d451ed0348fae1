"""Reach-set provisioning and differentiable collision constraints.

Reach sets are zonotopes whose centers are affine in the trajectory
parameter k, loaded from a file or fitted empirically from simulation
sweeps.  Collision margins come from the containment LP in ``geometry``;
a facet-form evaluator computes the same margins (and their exact
gradients) vectorized over all interval/obstacle pairs, which is what the
planner's inner loop consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry
from .geometry import Box, Zonotope, intersection_empty


class AtlasParseError(ValueError):
    """The atlas file is not structurally valid."""


class AtlasDimensionError(ValueError):
    """Entries of the atlas disagree on world or parameter dimensions."""


class AtlasValueError(ValueError):
    """The atlas contains non-finite numbers."""


@dataclass
class ReachInterval:
    j: int
    t_start: float
    t_end: float
    c: np.ndarray          # (w,) base center
    A: np.ndarray          # (w, dim_k) sensitivity of the center to k
    G: np.ndarray          # (w, ell) generators

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.G = np.asarray(self.G, dtype=float)
        if self.G.size == 0:
            self.G = np.zeros((self.c.size, 0))
        if self.G.ndim == 1:
            self.G = self.G.reshape(-1, 1)


@dataclass
class ReachAtlas:
    """Per-interval parameterized reach sets <c_j + A_j k, G_j>."""

    intervals: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.intervals:
            raise AtlasParseError("atlas has no intervals")
        w, dk = self.intervals[0].c.size, self.intervals[0].A.shape[1]
        for iv in self.intervals:
            if iv.c.size != w or iv.A.shape != (w, dk) or iv.G.shape[0] != w:
                raise AtlasDimensionError(
                    f"interval j={iv.j} has inconsistent dimensions")
            for arr in (iv.c, iv.A, iv.G):
                if not np.all(np.isfinite(arr)):
                    raise AtlasValueError(f"interval j={iv.j} has non-finite entries")

    @property
    def n_world(self) -> int:
        return self.intervals[0].c.size

    @property
    def dim_k(self) -> int:
        return self.intervals[0].A.shape[1]

    def reach_set(self, j: int, k) -> Zonotope:
        iv = self.intervals[j - 1]
        if iv.j != j:
            iv = next(v for v in self.intervals if v.j == j)
        k = np.atleast_1d(np.asarray(k, dtype=float))
        return Zonotope(iv.c + iv.A @ k, iv.G)


@dataclass
class Obstacle:
    zonotope: Zonotope
    j_start: Optional[int] = None
    j_end: Optional[int] = None

    def active(self, j: int) -> bool:
        return (self.j_start is None or j >= self.j_start) and \
            (self.j_end is None or j <= self.j_end)


@dataclass
class ObstacleSet:
    obstacles: list

    def __len__(self):
        return len(self.obstacles)


# ---------------------------------------------------------------------------
# Atlas file format
# ---------------------------------------------------------------------------

_ATLAS_VERSION = 1


def _fmt(value) -> str:
    return format(float(value), ".17g")


def _emit(obj, out):
    """Minimal JSON writer that renders floats with 17 significant digits."""
    if isinstance(obj, dict):
        out.append("{")
        for i, (key, val) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(key) + ":")
            _emit(val, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, val in enumerate(obj):
            if i:
                out.append(",")
            _emit(val, out)
        out.append("]")
    elif isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt(obj))
    else:
        out.append(json.dumps(obj))


def save_reach_atlas(atlas: ReachAtlas, path) -> None:
    doc = {
        "version": _ATLAS_VERSION,
        "n_world": atlas.n_world,
        "dim_k": atlas.dim_k,
        "intervals": [
            {
                "j": iv.j,
                "t_start": iv.t_start,
                "t_end": iv.t_end,
                "c": list(iv.c),
                "A": [list(row) for row in iv.A],
                "G": [list(row) for row in iv.G],
            }
            for iv in atlas.intervals
        ],
        "metadata": atlas.metadata,
    }
    out: list = []
    _emit(doc, out)
    with open(path, "w") as fh:
        fh.write("".join(out) + "\n")


def load_reach_atlas(path) -> ReachAtlas:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, OSError) as exc:
        raise AtlasParseError(f"cannot parse reach atlas {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != _ATLAS_VERSION:
        raise AtlasParseError(f"unsupported atlas version {doc.get('version')!r}")
    try:
        w, dk = int(doc["n_world"]), int(doc["dim_k"])
        intervals = [
            ReachInterval(j=int(item["j"]), t_start=float(item["t_start"]),
                          t_end=float(item["t_end"]), c=item["c"], A=item["A"],
                          G=item["G"])
            for item in doc["intervals"]
        ]
        metadata = dict(doc.get("metadata", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise AtlasParseError(f"malformed atlas field: {exc}") from exc
    atlas = ReachAtlas(intervals, metadata)
    if atlas.n_world != w or atlas.dim_k != dk:
        raise AtlasDimensionError(
            f"declared dimensions ({w}, {dk}) disagree with interval data "
            f"({atlas.n_world}, {atlas.dim_k})")
    return atlas


# ---------------------------------------------------------------------------
# Empirical atlas sampling
# ---------------------------------------------------------------------------

def _occupancy_hulls(states: np.ndarray, footprint: Zonotope):
    """Axis-aligned hulls of rot(yaw) @ footprint + position for state rows."""
    cos, sin = np.cos(states[:, 2]), np.sin(states[:, 2])
    fc, G = footprint.center, footprint.generators
    centers = np.stack([states[:, 0] + cos * fc[0] - sin * fc[1],
                        states[:, 1] + sin * fc[0] + cos * fc[1]], axis=1)
    gx, gy = G[0], G[1]
    half_x = np.abs(np.outer(cos, gx) - np.outer(sin, gy)).sum(axis=1)
    half_y = np.abs(np.outer(sin, gx) + np.outer(cos, gy)).sum(axis=1)
    return centers, np.stack([half_x, half_y], axis=1)


def _grid_1d(lo: float, hi: float, n: int) -> np.ndarray:
    if hi == lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def _grid(box: Box, n: int) -> np.ndarray:
    axes = [_grid_1d(lo, hi, n) for lo, hi in zip(box.lower, box.upper)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def sample_reach_atlas(model, x0, k_box: Box, theta_box: Box, schedule,
                       footprint: Optional[Zonotope], n_k: int, n_theta: int,
                       bloat: float = 0.05, h: Optional[float] = None) -> ReachAtlas:
    """Empirical reach atlas fitted from a (k, theta) simulation sweep.

    For every interval, the axis-aligned occupancy hull is collected per k
    grid point over all theta draws, the hull centers are fitted affinely in
    k by least squares, and the generators cover the hull half-widths plus
    the fit residuals plus ``bloat``.  The result carries an "empirical"
    source tag: it over-approximates the sampled occupancies but carries no
    formal coverage guarantee.
    """
    from . import simulate

    if n_k < 2 or n_theta < 2:
        raise ValueError("need at least 2 grid points per k and theta axis")
    if bloat < 0.0:
        raise ValueError("bloat margin must be nonnegative")
    footprint = footprint if footprint is not None else model.footprint
    if x0 is not None and not np.allclose(np.asarray(x0, dtype=float),
                                          model.x0[:np.size(x0)]):
        raise ValueError("atlas x0 must match the model initial state")

    k_grid = _grid(k_box, n_k)
    theta_grid = _grid(theta_box, n_theta)
    dt = schedule.dt
    t_end = schedule.t_f
    for k in k_grid:
        end = model.maneuver_end_time(k)
        if end is not None:
            t_end = max(t_end, end)
    n_intervals = int(np.ceil(t_end / dt - 1e-9))
    t_end = n_intervals * dt

    box_lo = np.full((n_intervals, k_grid.shape[0], 2), np.inf)
    box_hi = np.full((n_intervals, k_grid.shape[0], 2), -np.inf)
    for ki, k in enumerate(k_grid):
        try:
            batch = simulate.integrate_rk4_batch(model, k, theta_grid, schedule,
                                                 h=h, t_end=t_end)
        except simulate.SimulationDiverged as exc:
            theta = theta_grid[exc.row] if exc.row is not None else None
            raise simulate.SimulationDiverged(
                exc.time, exc.row,
                detail=f" while sampling the atlas at k={k}, theta={theta}") from exc
        times = batch.times
        j_lo = np.clip(np.floor((times - 1e-12) / dt).astype(int), 0, n_intervals - 1)
        j_hi = np.clip(np.floor((times + 1e-12) / dt).astype(int), 0, n_intervals - 1)
        flat = batch.states.reshape(-1, batch.states.shape[2])
        centers, halves = _occupancy_hulls(flat, footprint)
        lo = (centers - halves).reshape(len(times), -1, 2)
        hi = (centers + halves).reshape(len(times), -1, 2)
        for j in range(n_intervals):
            mask = (j_lo == j) | (j_hi == j)
            if not np.any(mask):
                continue
            box_lo[j, ki] = np.minimum(box_lo[j, ki], lo[mask].min(axis=(0, 1)))
            box_hi[j, ki] = np.maximum(box_hi[j, ki], hi[mask].max(axis=(0, 1)))

    phi = np.hstack([np.ones((k_grid.shape[0], 1)), k_grid])
    intervals = []
    for j in range(n_intervals):
        mids = 0.5 * (box_lo[j] + box_hi[j])
        halves = 0.5 * (box_hi[j] - box_lo[j])
        coeffs, *_ = np.linalg.lstsq(phi, mids, rcond=None)
        resid = mids - phi @ coeffs
        g_half = (halves + np.abs(resid)).max(axis=0) + bloat
        intervals.append(ReachInterval(
            j=j + 1, t_start=j * dt, t_end=(j + 1) * dt,
            c=coeffs[0], A=coeffs[1:].T, G=np.diag(g_half)))
    return ReachAtlas(intervals, metadata={"source": "empirical", "bloat": bloat})


# ---------------------------------------------------------------------------
# Collision margins
# ---------------------------------------------------------------------------

@dataclass
class Margin:
    j: int
    i: int
    s: float


@dataclass
class MarginGradient:
    j: int
    i: int
    s: float
    grad: np.ndarray
    flagged: bool


def constraint_margins(atlas: ReachAtlas, obstacles: ObstacleSet, k) -> list:
    """Exact LP margins s_{j,i}; the pair is collision-free iff s > 1."""
    out = []
    for iv in atlas.intervals:
        reach = atlas.reach_set(iv.j, k)
        for i, obs in enumerate(obstacles.obstacles):
            if not obs.active(iv.j):
                continue
            _, s = intersection_empty(reach, obs.zonotope)
            out.append(Margin(iv.j, i, s))
    return out


class MarginEvaluator:
    """Facet form of the margins, vectorized over all (j, i) pairs.

    In a 2-D world the containment scale of the combined-generator zonotope
    equals the maximum over its facet normals of |n . delta| / b, which is
    what the LP computes; the facet data is precomputed once so repeated
    margin and gradient queries during optimization cost a few flops per
    pair.  Pairs whose combined generators do not span the plane fall back
    to the LP (margins) and finite differences (gradients), flagged.
    """

    def __init__(self, atlas: ReachAtlas, obstacles: ObstacleSet):
        self.atlas = atlas
        self.obstacles = obstacles
        self.pairs = []          # (j, i, interval, obstacle)
        self._facets = []        # (normals (C,2), offsets (C,)) or None
        for iv in atlas.intervals:
            for i, obs in enumerate(obstacles.obstacles):
                if not obs.active(iv.j):
                    continue
                self.pairs.append((iv.j, i, iv, obs))
                self._facets.append(self._build_facets(iv, obs))

    @staticmethod
    def _build_facets(iv: ReachInterval, obs: Obstacle):
        cols = np.hstack([iv.G, obs.zonotope.generators])
        norms = np.linalg.norm(cols, axis=0)
        cols = cols[:, norms > 0.0]
        if cols.shape[0] != 2 or cols.shape[1] < 2 or \
                np.linalg.matrix_rank(cols) < 2:
            return None
        normals = np.stack([-cols[1], cols[0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        offsets = np.abs(normals @ cols).sum(axis=1)
        return normals, offsets

    def margins(self, k) -> list:
        k = np.atleast_1d(np.asarray(k, dtype=float))
        out = []
        for (j, i, iv, obs), facets in zip(self.pairs, self._facets):
            delta = iv.c + iv.A @ k - obs.zonotope.center
            if facets is None:
                _, s = intersection_empty(self.atlas.reach_set(j, k), obs.zonotope)
            else:
                normals, offsets = facets
                s = float(np.max(np.abs(normals @ delta) / offsets))
            out.append(Margin(j, i, s))
        return out

    def min_margin(self, k) -> float:
        values = [m.s for m in self.margins(k)]
        return min(values) if values else np.inf

    def gradients(self, k, active_set_threshold: float = 2.0) -> list:
        """Margin gradients for pairs with s below the active-set threshold.

        The gradient is the active facet normal pulled back through A_j (the
        dual of the containment LP); ties between facets and near-zero
        offsets are kinks and come back flagged with a finite-difference
        value instead.
        """
        k = np.atleast_1d(np.asarray(k, dtype=float))
        out = []
        for idx, ((j, i, iv, obs), facets) in enumerate(zip(self.pairs, self._facets)):
            delta = iv.c + iv.A @ k - obs.zonotope.center
            if facets is None:
                s = self._pair_margin(idx, k)
                if s >= active_set_threshold:
                    continue
                out.append(MarginGradient(j, i, s, self._fd_gradient(idx, k), True))
                continue
            normals, offsets = facets
            values = np.abs(normals @ delta) / offsets
            order = np.argsort(values)
            s = float(values[order[-1]])
            if s >= active_set_threshold:
                continue
            best = order[-1]
            tie = values.size > 1 and \
                (s - values[order[-2]]) <= 1e-9 * max(s, 1.0)
            near_zero = abs(normals[best] @ delta) <= 1e-12
            if tie or near_zero:
                out.append(MarginGradient(j, i, s, self._fd_gradient(idx, k), True))
                continue
            sign = np.sign(normals[best] @ delta)
            grad = sign * (iv.A.T @ normals[best]) / offsets[best]
            out.append(MarginGradient(j, i, s, grad, False))
        return out

    def _pair_margin(self, idx: int, k) -> float:
        (j, i, iv, obs) = self.pairs[idx]
        facets = self._facets[idx]
        if facets is None:
            _, s = intersection_empty(self.atlas.reach_set(j, k), obs.zonotope)
            return s
        normals, offsets = facets
        delta = iv.c + iv.A @ k - obs.zonotope.center
        return float(np.max(np.abs(normals @ delta) / offsets))

    def _fd_gradient(self, idx: int, k, rel_step: float = 1e-7) -> np.ndarray:
        k = np.atleast_1d(np.asarray(k, dtype=float))
        grad = np.zeros(k.size)
        for a in range(k.size):
            eps = rel_step * max(abs(k[a]), 1.0)
            kp, km = k.copy(), k.copy()
            kp[a] += eps
            km[a] -= eps
            grad[a] = (self._pair_margin(idx, kp) - self._pair_margin(idx, km)) / (2 * eps)
        return grad


def constraint_gradient(atlas: ReachAtlas, obstacles: ObstacleSet, k,
                        active_set_threshold: float = 2.0) -> list:
    """Gradients of the near-active margins with respect to k."""
    return MarginEvaluator(atlas, obstacles).gradients(k, active_set_threshold)
