"""Shared toy models and oracles for the test suite."""

import numpy as np

from infodesign.geometry import Box
from infodesign.systems import SystemModel


class ToyModel(SystemModel):
    """Generic batch model from a derivative closure f(t, X, k, Thetas)."""

    def __init__(self, deriv, x0, measure=None, state_dim=None, measurement_dim=None,
                 param_box=None, k_box=None, noise_cov=None, default_step=1e-2):
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.state_dim = state_dim or self.x0.size
        self._deriv = deriv
        self._measure = measure
        self.measurement_dim = measurement_dim or self.state_dim
        self.param_box = param_box or Box([0.0], [1.0])
        self.k_box = k_box or Box([0.0], [1.0])
        self.noise_cov = np.atleast_2d(noise_cov) if noise_cov is not None \
            else np.eye(self.measurement_dim)
        self.default_step = default_step
        self.max_step = None

    def derivative_batch(self, t, X, k, Thetas):
        return self._deriv(t, X, k, Thetas)

    def measure_batch(self, X):
        if self._measure is None:
            return np.array(X, dtype=float)
        return self._measure(X)


class SyntheticScalarModel(SystemModel):
    """Scalar model whose measurement mean at t is t * mean_fn(theta, k).

    The state integrates a rate constant in (t, x), so RK4 reproduces the
    closed form exactly and the model plugs into the full pipeline.
    """

    def __init__(self, mean_fn, noise_var, theta_box=None, k_box=None):
        self.mean_fn = mean_fn
        self.state_dim = 1
        self.measurement_dim = 1
        self.param_box = theta_box or Box([0.0], [1.0])
        self.k_box = k_box or Box([0.0], [1.0])
        self.noise_cov = np.array([[float(noise_var)]])
        self.x0 = np.zeros(1)
        self.default_step = 1e-2
        self.max_step = None

    def derivative_batch(self, t, X, k, Thetas):
        rate = np.asarray(self.mean_fn(Thetas[:, 0], float(np.ravel(k)[0])), dtype=float)
        return rate[:, None] * np.ones_like(X)

    def measure_batch(self, X):
        return np.array(X, dtype=float)

    def measurement_mean_batch(self, t, k, Thetas, h=None):
        rate = np.asarray(self.mean_fn(Thetas[:, 0], float(np.ravel(k)[0])), dtype=float)
        return (t * rate)[:, None]


class ConstantMeasureModel(SystemModel):
    """Measurements independent of theta: every information quantity collapses."""

    def __init__(self, d=1, value=0.7, noise_var=0.01, theta_box=None):
        self.state_dim = d
        self.measurement_dim = d
        self.param_box = theta_box or Box([0.0], [1.0])
        self.k_box = Box([0.0], [1.0])
        self.noise_cov = noise_var * np.eye(d)
        self.x0 = np.full(d, float(value))
        self.default_step = 1e-2
        self.max_step = None

    def derivative_batch(self, t, X, k, Thetas):
        return np.zeros_like(X)

    def measure_batch(self, X):
        return np.array(X, dtype=float)

    def measurement_mean_batch(self, t, k, Thetas, h=None):
        return np.tile(self.x0, (Thetas.shape[0], 1))


# Mean functions of the five-model lower-bound suite (theta in [0,1]).
LOWER_BOUND_SUITE = [
    ("linear", lambda th, k: k * th, 0.01),
    ("sine", lambda th, k: k * np.sin(3.0 * th), 0.02),
    ("decay", lambda th, k: np.exp(-(0.5 + k) * th), 0.015),
    ("quadratic", lambda th, k: (0.3 + k) * th**2 + 0.2 * th, 0.01),
    ("kinked", lambda th, k: th**3 * k**2 + th * np.exp(-abs(0.2 - k)), 0.04),
]


def zonotope_support_margin(Z, point, n_angles=62832):
    """Directional-support oracle for 2-D containment: the scale of ``point``.

    Evaluates max over a fine angular grid of |d . (p - c)| / h_Z(d); exact
    in the limit, accurate to ~1/n_angles here.  Independent of the LP.
    """
    angles = np.linspace(0.0, np.pi, n_angles, endpoint=False)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    num = np.abs(dirs @ (np.asarray(point, dtype=float) - Z.center))
    den = np.abs(dirs @ Z.generators).sum(axis=1)
    mask = den > 1e-300
    if not np.any(mask):
        return 0.0 if np.allclose(point, Z.center) else np.inf
    return float(np.max(num[mask] / den[mask]))
