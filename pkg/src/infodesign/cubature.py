"""Clenshaw-Curtis quadrature and tensor-product cubature over interval boxes.

Rules are full tensor grids: the uncertain-parameter boxes in this toolkit
are at most 3-D, so full grids with a handful of points per axis stay cheap
and keep the weights nonnegative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box

# Relative slack for the weights-sum-equals-volume invariant.
WEIGHT_SUM_RTOL = 1e-10


def clenshaw_curtis_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Clenshaw-Curtis rule on [-1, 1].

    Nodes are the Chebyshev-Lobatto points cos(pi*i/(n-1)) returned in
    ascending order; n = 1 degenerates to the midpoint rule.  Weights are
    nonnegative and the rule integrates polynomials of degree <= n-1 exactly.
    """
    if n < 1:
        raise ValueError(f"rule needs at least one point, got n={n}")
    if n == 1:
        return np.array([0.0]), np.array([2.0])
    N = n - 1
    i = np.arange(n)
    nodes = np.cos(np.pi * i / N)
    j = np.arange(1, N // 2 + 1)
    if j.size:
        b = np.where(2 * j == N, 1.0, 2.0)
        correction = (b / (4.0 * j**2 - 1.0)) * np.cos(2.0 * np.outer(i, j) * np.pi / N)
        inner = 1.0 - correction.sum(axis=1)
    else:
        inner = np.ones(n)
    c = np.full(n, 2.0)
    c[0] = c[-1] = 1.0
    weights = c / N * inner
    return nodes[::-1].copy(), weights[::-1].copy()


@dataclass
class CubatureRule:
    """Points and weights approximating an integral over a box domain."""

    points: np.ndarray
    weights: np.ndarray
    domain: Box

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.points.shape[0] != self.weights.size or self.weights.size < 1:
            raise ValueError("point and weight counts must match and be >= 1")
        if self.points.shape[1] != self.domain.dim:
            raise ValueError("point dimension does not match the domain")
        for p in self.points:
            if not self.domain.contains(p):
                raise ValueError(f"cubature point {p} falls outside the domain")
        total, vol = float(self.weights.sum()), self.domain.volume()
        if abs(total - vol) > WEIGHT_SUM_RTOL * max(abs(vol), 1.0):
            raise ValueError(f"weights sum to {total}, expected domain volume {vol}")

    @property
    def n_points(self) -> int:
        return self.weights.size


def tensor_rule(domain: Box, n_per_dim) -> CubatureRule:
    """Tensor product of 1-D Clenshaw-Curtis rules mapped onto each axis.

    Zero-width axes collapse to a single midpoint node with axis weight 1,
    so a degenerate prior box expresses a known parameter without callers
    special-casing it.
    """
    n_per_dim = list(n_per_dim)
    if len(n_per_dim) != domain.dim:
        raise ValueError(
            f"need one point count per axis: got {len(n_per_dim)} for a "
            f"{domain.dim}-D domain"
        )
    axes_nodes, axes_weights = [], []
    for lo, hi, n in zip(domain.lower, domain.upper, n_per_dim):
        if n < 1:
            raise ValueError("per-axis point counts must be >= 1")
        if hi == lo:
            axes_nodes.append(np.array([lo]))
            axes_weights.append(np.array([1.0]))
            continue
        nodes, weights = clenshaw_curtis_1d(int(n))
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        axes_nodes.append(np.clip(mid + half * nodes, lo, hi))
        axes_weights.append(half * weights)
    grids = np.meshgrid(*axes_nodes, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*axes_weights, indexing="ij")
    weights = np.ones(points.shape[0])
    for wg in wgrids:
        weights = weights * wg.ravel()
    return CubatureRule(points, weights, domain)


def integrate(rule: CubatureRule, f) -> float:
    """Weighted sum over the rule points, accumulated in fixed order."""
    total = 0.0
    for w, x in zip(rule.weights, rule.points):
        total += w * float(f(x))
    return total
