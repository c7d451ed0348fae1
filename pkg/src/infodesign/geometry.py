"""Zonotope algebra and collision predicates.

Zonotopes serve as agent footprints, obstacles, and reach sets.  Point
containment is decided by an exact inf-norm minimization LP whose optimum
doubles as a differentiable safety margin: the point is inside iff the
optimal scale is <= 1, and the same scale tells the planner how far two
sets are from touching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

# Absolute tolerance when comparing an LP scale against 1 (solver noise).
SCALE_TOL = 1e-9


@dataclass
class Box:
    """Axis-aligned interval box given by componentwise bounds."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("box bounds must be 1-D arrays of equal length")
        if np.any(self.lower > self.upper):
            raise ValueError("box lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def volume(self) -> float:
        """Product of widths over non-degenerate axes (1.0 for a point)."""
        w = self.widths
        return float(np.prod(w[w > 0.0])) if np.any(w > 0.0) else 1.0

    def contains(self, point, tol: float = 1e-12) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower - tol) and np.all(p <= self.upper + tol))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Uniform samples, shape (n, dim); degenerate axes stay pinned."""
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


@dataclass
class Zonotope:
    """Set {c + G @ b : ||b||_inf <= 1} with center c and generator columns G."""

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        G = np.asarray(self.generators, dtype=float)
        if G.size == 0:
            G = np.zeros((self.center.size, 0))
        if G.ndim == 1:
            G = G.reshape(-1, 1)
        if G.shape[0] != self.center.size:
            raise ValueError(
                f"center is {self.center.size}-D but generators have {G.shape[0]} rows"
            )
        self.generators = G

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def n_generators(self) -> int:
        return self.generators.shape[1]

    def interval_hull(self) -> Box:
        half = np.abs(self.generators).sum(axis=1)
        return Box(self.center - half, self.center + half)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Random points of the set (uniform in coefficient space, not volume)."""
        beta = rng.uniform(-1.0, 1.0, size=(n, self.n_generators))
        return self.center + beta @ self.generators.T

    @staticmethod
    def from_box(box: Box) -> "Zonotope":
        half = 0.5 * box.widths
        keep = half > 0.0
        return Zonotope(box.center, np.diag(half)[:, keep])


def linear_map(A, Z: Zonotope) -> Zonotope:
    """Image of Z under the matrix A: <A c, A G>."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != Z.dim:
        raise ValueError(f"matrix has {A.shape[1]} columns but zonotope is {Z.dim}-D")
    return Zonotope(A @ Z.center, A @ Z.generators)


def minkowski_sum(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    """<c1 + c2, [G1 G2]>."""
    if Z1.dim != Z2.dim:
        raise ValueError(f"dimension mismatch: {Z1.dim} vs {Z2.dim}")
    return Zonotope(Z1.center + Z2.center, np.hstack([Z1.generators, Z2.generators]))


def translate(Z: Zonotope, offset) -> Zonotope:
    return Zonotope(Z.center + np.asarray(offset, dtype=float), Z.generators)


def contains_point(Z: Zonotope, p) -> tuple[bool, float]:
    """Exact containment test via min ||b||_inf s.t. G b = p - c.

    Returns (contained, scale).  scale <= 1 means p is in Z; scale is +inf
    when p - c lies outside the column space of G (lower-dimensional set).
    """
    p = np.asarray(p, dtype=float)
    if p.shape != Z.center.shape:
        raise ValueError(f"point is {p.size}-D but zonotope is {Z.dim}-D")
    delta = p - Z.center
    ell = Z.n_generators
    if ell == 0:
        if np.all(delta == 0.0):
            return True, 0.0
        return False, np.inf
    # Variables [b_1..b_ell, s]: minimize s with -s <= b_i <= s, G b = delta.
    c = np.zeros(ell + 1)
    c[-1] = 1.0
    eye = np.eye(ell)
    ones = np.ones((ell, 1))
    A_ub = np.block([[eye, -ones], [-eye, -ones]])
    b_ub = np.zeros(2 * ell)
    A_eq = np.hstack([Z.generators, np.zeros((Z.dim, 1))])
    bounds = [(None, None)] * ell + [(0.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=delta, bounds=bounds,
                  method="highs")
    if res.status == 2:  # infeasible: delta not in the generator span
        return False, np.inf
    if not res.success:
        raise RuntimeError(f"containment LP failed with status {res.status}: {res.message}")
    s = max(float(res.fun), 0.0)
    return s <= 1.0 + SCALE_TOL, s


def intersection_empty(Z1: Zonotope, Z2: Zonotope) -> tuple[bool, float]:
    """Emptiness test for Z1 inter Z2 with differentiable margin s.

    The intersection is empty iff the center offset is not contained in the
    combined-generator zonotope, i.e. iff the containment scale s exceeds 1.
    Ties within SCALE_TOL count as non-empty (the conservative verdict).
    """
    if Z1.dim != Z2.dim:
        raise ValueError(f"dimension mismatch: {Z1.dim} vs {Z2.dim}")
    combined = Zonotope(np.zeros(Z1.dim), np.hstack([Z1.generators, Z2.generators]))
    _, s = contains_point(combined, Z1.center - Z2.center)
    return s > 1.0 + SCALE_TOL, s


def rotation2d(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])
