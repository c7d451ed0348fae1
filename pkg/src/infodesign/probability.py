"""Gaussian, uniform-box, and Gaussian-mixture densities.

Everything runs in log space: the measurement-noise covariances used here
are small (1e-4 on the scalar benchmark), so raw density products underflow
quickly on multi-measurement trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .geometry import Box

_LOG_2PI = np.log(2.0 * np.pi)


def _check_covariance(cov) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
        raise ValueError("covariance must be symmetric")
    return cov


@dataclass
class Gaussian:
    """Multivariate normal with positive-definite covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = _check_covariance(self.covariance)
        if self.covariance.shape[0] != self.mean.size:
            raise ValueError("mean and covariance dimensions differ")
        try:
            self._chol = cho_factor(self.covariance, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        self._log_det = 2.0 * np.log(np.diag(self._chol[0])).sum()

    @property
    def dim(self) -> int:
        return self.mean.size


def log_density(g: Gaussian, y) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != g.mean.shape:
        raise ValueError(f"point is {y.size}-D but the Gaussian is {g.dim}-D")
    delta = y - g.mean
    maha = float(delta @ cho_solve(g._chol, delta))
    return -0.5 * (g.dim * _LOG_2PI + g._log_det + maha)


def cross_term(mu_i, mu_l, sigma) -> float:
    """Pairwise Gaussian convolution value N(mu_i; mu_l, 2*sigma).

    This is the closed-form integral of the product of two Gaussians with
    shared covariance, the building block of the mixture-entropy lower bound.
    """
    mu_i = np.atleast_1d(np.asarray(mu_i, dtype=float))
    mu_l = np.atleast_1d(np.asarray(mu_l, dtype=float))
    if mu_i.shape != mu_l.shape:
        raise ValueError("mean dimensions differ")
    return float(np.exp(log_density(Gaussian(mu_l, 2.0 * _check_covariance(sigma)), mu_i)))


def entropy_const(sigma) -> float:
    """Negative differential entropy of N(., sigma): -0.5*(ln((2pi)^d det) + d)."""
    sigma = _check_covariance(sigma)
    d = sigma.shape[0]
    sign, log_det = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise ValueError("covariance is not positive definite")
    return -0.5 * (d * _LOG_2PI + log_det + d)


@dataclass
class UniformBoxPrior:
    """Uniform density over a box; degenerate axes are treated as known."""

    box: Box

    def __post_init__(self):
        self._log_vol = np.log(self.box.volume())

    @property
    def dim(self) -> int:
        return self.box.dim

    def log_density(self, theta) -> float:
        if self.box.contains(theta):
            return -self._log_vol
        return -np.inf

    def density(self, theta) -> float:
        return float(np.exp(self.log_density(theta)))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.box.sample(rng, n)


@dataclass
class GaussianMixture:
    """Weighted Gaussian components; here, the cubature form of the evidence."""

    components: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if len(self.components) != self.weights.size or not self.components:
            raise ValueError("component and weight counts must match and be >= 1")
        if np.any(self.weights < 0.0):
            raise ValueError("mixture weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError(f"mixture weights sum to {self.weights.sum()}, expected 1")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError("mixture components must share one dimension")

    @property
    def dim(self) -> int:
        return self.components[0].dim


def mixture_log_density(m: GaussianMixture, y) -> float:
    """log sum_i w_i N(y; mu_i, Sigma_i), stabilized by the usual max shift."""
    comp_logs = np.array([log_density(c, y) for c in m.components])
    return float(logsumexp(comp_logs, b=m.weights))
