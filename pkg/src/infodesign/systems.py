"""Parameterized system models: closed-loop dynamics plus measurement maps.

Two concrete models ship with the toolkit: a one-state recast of the scalar
design benchmark, and a front-wheel-drive vehicle whose maneuver-tracking
controller is folded into the dynamics so that the trajectory parameter k
selects a full closed-loop behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np

from .geometry import Box, Zonotope, rotation2d


class SystemModel:
    """Interface shared by all models.

    Concrete models define ``derivative_batch`` / ``measure_batch`` over a
    leading batch axis; the scalar entry points wrap them.  ``theta`` holds
    the uncertain parameters, ``k`` the trajectory parameter.
    """

    state_dim: int
    measurement_dim: int
    param_box: Box
    k_box: Box
    noise_cov: np.ndarray
    x0: np.ndarray
    default_step: float = 1e-2
    max_step: Optional[float] = None

    def derivative(self, t: float, x, k, theta) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        theta = np.asarray(theta, dtype=float)
        return self.derivative_batch(t, x[None, :], k, theta[None, :])[0]

    def derivative_batch(self, t: float, X, k, Thetas) -> np.ndarray:
        raise NotImplementedError

    def measure(self, x) -> np.ndarray:
        return self.measure_batch(np.asarray(x, dtype=float)[None, :])[0]

    def measure_batch(self, X) -> np.ndarray:
        raise NotImplementedError

    def phase_times(self, k) -> list[float]:
        """Known derivative-discontinuity instants the integrator must hit."""
        return []

    def event_value_batch(self, X) -> Optional[np.ndarray]:
        """Regime indicator whose sign changes are located by bisection."""
        return None

    def maneuver_end_time(self, k) -> Optional[float]:
        """Time by which the maneuver (including braking) has ended."""
        return None

    def occupancy(self, x) -> Optional[Zonotope]:
        """World-space footprint at state x; None for models with no footprint."""
        return None

    def measurement_mean_batch(self, t: float, k, Thetas, h: Optional[float] = None) -> np.ndarray:
        """Mean measurement at time t for each theta row (simulates by default)."""
        from . import simulate  # late import; simulate duck-types models

        schedule = simulate.MeasurementSchedule(dt=t, t_f=t)
        batch = simulate.integrate_rk4_batch(self, k, Thetas, schedule,
                                             h=h, record_states=False)
        return batch.measurement_means[:, -1, :]


# ---------------------------------------------------------------------------
# Scalar design benchmark
# ---------------------------------------------------------------------------

def benchmark_measure(theta, u):
    """Mean measurement theta^3 u^2 + exp(-|0.2 - u|) of the scalar benchmark."""
    theta = np.asarray(theta, dtype=float)
    return theta**3 * u**2 + np.exp(-abs(0.2 - u))


class StaticBenchmark(SystemModel):
    """Scalar benchmark recast as a one-state system.

    The state integrates the constant rate theta^3 u^2 + exp(-|0.2 - u|)
    from zero, so the state at t = 1 equals the benchmark measurement mean
    and the generic simulate/cubature pipeline applies unchanged.  The
    trajectory parameter k is the scalar input u.
    """

    def __init__(self, noise_var: float = 1e-4):
        self.state_dim = 1
        self.measurement_dim = 1
        self.param_box = Box([0.0], [1.0])
        self.k_box = Box([0.0], [1.0])
        self.noise_cov = np.array([[noise_var]])
        self.x0 = np.zeros(1)
        self.default_step = 1e-2

    def derivative_batch(self, t, X, k, Thetas):
        u = float(np.asarray(k, dtype=float).ravel()[0])
        rate = benchmark_measure(Thetas[:, 0], u)
        return rate[:, None] * np.ones_like(X)

    def measure_batch(self, X):
        return np.array(X, dtype=float)

    def measurement_mean_batch(self, t, k, Thetas, h=None):
        # The dynamics are constant in (t, x), so the flow is exactly t*rate.
        u = float(np.asarray(k, dtype=float).ravel()[0])
        return (t * benchmark_measure(Thetas[:, 0], u))[:, None]


# ---------------------------------------------------------------------------
# Front-wheel-drive vehicle
# ---------------------------------------------------------------------------

@dataclass
class VehicleParams:
    """Nominal vehicle constants and controller gains.

    ``m``, ``l_f``, ``l_r`` are the controller's nominal values; the plant
    uses whatever theta = (m, l_f, l_r) it is simulated with.  ``t_m`` is
    filled per maneuver (6 s lane change, 4 s turn) when left as None.
    """

    m: float = 1500.0
    l_f: float = 1.13
    l_r: float = 1.67
    I_zz: float = 2500.0
    c_alpha_f: float = 8.0e4
    c_alpha_r: float = 8.0e4
    K_u: float = 4.0
    K_h: float = 4.0
    K_r: float = 4.0
    kappa1_u: float = 1.0
    kappa2_u: float = 0.5
    phi1_u: float = 1.0
    phi2_u: float = 0.5
    kappa1_r: float = 1.0
    kappa2_r: float = 0.5
    phi1_r: float = 1.0
    phi2_r: float = 0.5
    M_u: float = 1.0
    M_r: float = 1.0
    a_decel: float = -5.0
    x4_crit: float = 5.0
    h1: float = 0.2
    h2: float = 1.0
    t_m: Optional[float] = None
    t_plan: float = 3.0
    # Window bound of the lane-change heading bump; None keeps the braking
    # duration t_b as written in the maneuver family definition.
    lane_heading_window: Optional[float] = None
    # Which component of k gates the turn maneuver's initial speed ramp.
    turn_ramp_guard: str = "k1"

    def __post_init__(self):
        gains = {
            "m": self.m, "l_f": self.l_f, "l_r": self.l_r, "I_zz": self.I_zz,
            "c_alpha_f": self.c_alpha_f, "c_alpha_r": self.c_alpha_r,
            "K_u": self.K_u, "K_h": self.K_h, "K_r": self.K_r,
            "kappa1_u": self.kappa1_u, "kappa2_u": self.kappa2_u,
            "phi1_u": self.phi1_u, "phi2_u": self.phi2_u,
            "kappa1_r": self.kappa1_r, "kappa2_r": self.kappa2_r,
            "phi1_r": self.phi1_r, "phi2_r": self.phi2_r,
            "M_u": self.M_u, "M_r": self.M_r,
        }
        for name, value in gains.items():
            if value <= 0.0:
                raise ValueError(f"vehicle parameter {name} must be positive, got {value}")
        if self.a_decel >= 0.0:
            raise ValueError(f"a_decel must be negative, got {self.a_decel}")
        if self.x4_crit <= 0.0:
            raise ValueError(f"x4_crit must be positive, got {self.x4_crit}")
        if self.turn_ramp_guard not in ("k1", "k2"):
            raise ValueError(f"turn_ramp_guard must be 'k1' or 'k2', got {self.turn_ramp_guard}")


class DesiredState(NamedTuple):
    x3: float
    x4: float
    x6: float
    dx4: float
    dx6: float


MANEUVERS = ("lane_change", "left_turn")
_DEFAULT_T_M = {"lane_change": 6.0, "left_turn": 4.0}


class DesiredTrajectory:
    """Reference speed/heading family for one maneuver, closed form in (t, k).

    k = (k1, k2): k1 is the cruise speed, k2 scales the heading excitation
    (lane change) or sets the yaw-rate plateau (turn).  Every member ends
    with a constant-deceleration braking phase that reaches zero speed
    strictly before the stop time t_s = t_m + t_b.
    """

    def __init__(self, maneuver: str, vp: VehicleParams, x3_0: float = 0.0,
                 x4_0: float = 0.0):
        if maneuver not in MANEUVERS:
            raise ValueError(f"unknown maneuver {maneuver!r}; expected one of {MANEUVERS}")
        self.maneuver = maneuver
        self.vp = vp if vp.t_m is not None else replace(vp, t_m=_DEFAULT_T_M[maneuver])
        self.x3_0 = float(x3_0)
        self.x4_0 = float(x4_0)

    def brake_time(self, k1: float) -> float:
        vp = self.vp
        if k1 > vp.x4_crit:
            return 1.5 + (vp.x4_crit - k1) / vp.a_decel
        return 1.5

    def stop_time(self, k1: float) -> float:
        return self.vp.t_m + self.brake_time(k1)

    def zero_speed_time(self, k1: float) -> float:
        """Instant where the braking ramp hits zero (clamped afterwards)."""
        return self.vp.t_m + max(k1, 0.0) / abs(self.vp.a_decel)

    def phase_times(self, k) -> list[float]:
        k1 = float(np.asarray(k, dtype=float).ravel()[0])
        vp = self.vp
        times = [vp.t_m, self.zero_speed_time(k1), self.stop_time(k1)]
        if self.maneuver == "lane_change":
            window = vp.lane_heading_window if vp.lane_heading_window is not None \
                else self.brake_time(k1)
            times.append(window)
        else:
            times.extend([0.25 * vp.t_m, 0.75 * vp.t_m])
        return sorted({t for t in times if t > 0.0})

    def _brake_speed(self, t: float, k1: float) -> tuple[float, float]:
        # Gate on the same expression the integrator clamps its steps to, so
        # the clamped branch starts exactly at the zero-speed checkpoint.
        if t >= self.zero_speed_time(k1):
            return 0.0, 0.0
        v = k1 + (t - self.vp.t_m) * self.vp.a_decel
        if v <= 0.0:
            return 0.0, 0.0
        return v, self.vp.a_decel

    def values(self, t: float, k) -> DesiredState:
        k = np.asarray(k, dtype=float).ravel()
        k1, k2 = float(k[0]), float(k[1])
        if self.maneuver == "lane_change":
            return self._lane_change(t, k1, k2)
        return self._left_turn(t, k1, k2)

    def _lane_change(self, t: float, k1: float, k2: float) -> DesiredState:
        vp = self.vp
        t_b = self.brake_time(k1)
        window = vp.lane_heading_window if vp.lane_heading_window is not None else t_b
        # Right-continuous at t = 0 so RK4 stages inside the first step agree.
        if 0.0 <= t < window:
            dt_c = t - 0.5 * t_b
            bump = vp.h1 * k2 * np.exp(-vp.h2 * dt_c**2)
            x3 = self.x3_0 + bump
            x6 = -2.0 * vp.h2 * dt_c * bump
            dx6 = bump * (4.0 * vp.h2**2 * dt_c**2 - 2.0 * vp.h2)
        else:
            x3, x6, dx6 = self.x3_0, 0.0, 0.0
        if t < vp.t_m:
            x4 = self.x4_0 + (k1 - self.x4_0) * t / vp.t_m
            dx4 = (k1 - self.x4_0) / vp.t_m
        else:
            x4, dx4 = self._brake_speed(t, k1)
        return DesiredState(x3, x4, x6, dx4, dx6)

    def _left_turn(self, t: float, k1: float, k2: float) -> DesiredState:
        vp = self.vp
        q = 0.25 * vp.t_m
        guard_value = k1 if vp.turn_ramp_guard == "k1" else k2
        if t < q:
            if 11.0 / 8.0 * vp.t_m < guard_value:
                x4, dx4 = 5.5 * t, 5.5
            else:
                x4, dx4 = k1, 0.0
        elif t < vp.t_m:
            x4, dx4 = k1, 0.0
        else:
            x4, dx4 = self._brake_speed(t, k1)
        omega = 4.0 * np.pi / vp.t_m

        def ramp_integral(s):  # integral of the yaw-rate ramp from 0 to s
            return 0.5 * k2 * (s - np.sin(omega * s) / omega)

        if t < q:
            x6 = 0.5 * k2 * (1.0 - np.cos(omega * t))
            dx6 = 0.5 * k2 * omega * np.sin(omega * t)
            x3 = self.x3_0 + ramp_integral(t)
        elif t < 3.0 * q:
            x6, dx6 = k2, 0.0
            x3 = self.x3_0 + ramp_integral(q) + k2 * (t - q)
        elif t < vp.t_m:
            x6 = 0.5 * k2 * (1.0 - np.cos(omega * t))
            dx6 = 0.5 * k2 * omega * np.sin(omega * t)
            x3 = self.x3_0 + ramp_integral(q) + 2.0 * k2 * q \
                + ramp_integral(t) - ramp_integral(3.0 * q)
        else:
            x6, dx6 = 0.0, 0.0
            x3 = self.x3_0 + 0.75 * k2 * vp.t_m
        return DesiredState(x3, x4, x6, dx4, dx6)


def desired_trajectory(t: float, k, maneuver: str, vp: VehicleParams,
                       x3_0: float = 0.0, x4_0: float = 0.0) -> DesiredState:
    """Desired heading/speed/yaw-rate and rates at (t, k) for one maneuver."""
    return DesiredTrajectory(maneuver, vp, x3_0=x3_0, x4_0=x4_0).values(t, k)


def tire_forces(t: float, x, k, integrals, vp: VehicleParams,
                desired: DesiredTrajectory) -> tuple[float, float, float, float]:
    """High-speed closed-loop tire forces (F_xf, F_yf, F_xr, F_yr).

    The vehicle is front-wheel drive, so F_xr = 0; the rear lateral force
    follows the linear slip model.  Gains adapt through the accumulated
    squared tracking errors (I_u, I_r).  Only valid away from standstill:
    the rear slip angle divides by the longitudinal speed.
    """
    x = np.asarray(x, dtype=float)
    x3, x4, x5, x6 = x[2], x[3], x[4], x[5]
    if abs(x4) < 1e-6:
        raise ValueError(
            f"|x4|={abs(x4):.2e} < 1e-6: high-speed tire forces are singular; "
            "the caller must use the low-speed dynamics here"
        )
    I_u, I_r = float(integrals[0]), float(integrals[1])
    des = desired.values(t, k)

    alpha_r = -(x5 - vp.l_r * x6) / x4
    F_yr = vp.c_alpha_r * alpha_r
    F_xr = 0.0

    e_u = x4 - des.x4
    kappa_u = vp.kappa1_u + vp.kappa2_u * I_u
    phi_u = vp.phi1_u + vp.phi2_u * I_u
    tau_u = -(kappa_u * vp.M_u + phi_u) * e_u
    F_xf = -vp.m * vp.K_u * e_u + vp.m * des.dx4 - F_xr - vp.m * x5 * x6 + vp.m * tau_u

    e3 = x3 - des.x3
    e6 = x6 - des.x6
    kappa_r = vp.kappa1_r + vp.kappa2_r * I_r
    phi_r = vp.phi1_r + vp.phi2_r * I_r
    e_r = vp.K_r * e6 + vp.K_h * e3
    tau_r = -(kappa_r * vp.M_r + phi_r) * e_r
    F_yf = (-vp.I_zz * vp.K_r / vp.l_f) * e6 + (vp.I_zz / vp.l_f) * des.dx6 \
        + (-vp.I_zz * vp.K_h / vp.l_f) * e3 + (vp.l_r / vp.l_f) * F_yr \
        + (vp.I_zz / vp.l_f) * tau_r
    return float(F_xf), float(F_yf), float(F_xr), float(F_yr)


# Speed floor for the steering-angle recovery in the low-speed regime.
_DELTA_SPEED_FLOOR = 0.1

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _njit = None

if _njit is not None:
    @_njit(cache=True)
    def _vehicle_rhs(X, high, floored, th_m, th_lf, th_lr,
                     d_x3, d_x4, d_x6, d_dx4, d_dx6,
                     m, l_f, l_r, I_zz, c_af, c_ar, K_u, K_h, K_r,
                     k1u, k2u, p1u, p2u, k1r, k2r, p1r, p2r, M_u, M_r):
        n = X.shape[0]
        out = np.empty((n, 8))
        for i in range(n):
            x3, x4, x5, x6 = X[i, 2], X[i, 3], X[i, 4], X[i, 5]
            I_u, I_r = X[i, 6], X[i, 7]
            e_u = x4 - d_x4
            tau_u = -((k1u + k2u * I_u) * M_u + (p1u + p2u * I_u)) * e_u
            F_xf = m * (-K_u * e_u + d_dx4 - x5 * x6 + tau_u)
            if floored[i]:
                x4f = x4 if x4 > 1e-6 else 1e-6
            else:
                x4f = _DELTA_SPEED_FLOOR
            F_yr_nom = c_ar * (-(x5 - l_r * x6) / x4f)
            e3 = x3 - d_x3
            e6 = x6 - d_x6
            e_r = K_r * e6 + K_h * e3
            tau_r = -((k1r + k2r * I_r) * M_r + (p1r + p2r * I_r)) * e_r
            F_yf = (I_zz / l_f) * (-K_r * e6 + d_dx6 - K_h * e3 + tau_r) \
                + (l_r / l_f) * F_yr_nom
            mt, lft, lrt = th_m[i], th_lf[i], th_lr[i]
            cos3, sin3 = np.cos(x3), np.sin(x3)
            out[i, 0] = x4 * cos3 - x5 * sin3
            out[i, 1] = x4 * sin3 + x5 * cos3
            out[i, 2] = x6
            out[i, 3] = F_xf / mt + x5 * x6
            if high[i]:
                x4s = x4 if x4 > 1e-6 else 1e-6
                F_yr = c_ar * (-(x5 - lrt * x6) / x4s)
                out[i, 4] = (F_yf + F_yr) / mt - x4 * x6
                out[i, 5] = (lft * F_yf - lrt * F_yr) / I_zz
            else:
                lt = lft + lrt
                delta = F_yf / c_af + (x5 + l_f * x6) / x4f
                C_us = (mt / lt) * (lrt / c_af - lft / c_ar)
                out[i, 4] = lrt * x6 - (mt * lft / (c_ar * lt)) * x4 * x4 * x6
                out[i, 5] = delta * x4 / (lt + C_us * x4 * x4)
            out[i, 6] = e_u * e_u
            out[i, 7] = e6 * e6 + e3 * e3
        return out
else:
    _vehicle_rhs = None

DEFAULT_FOOTPRINT = Zonotope([0.0, 0.0], [[1.2, 0.0], [0.0, 0.55]])
DEFAULT_K_BOX = {
    "lane_change": Box([8.0, -1.0], [10.0, 1.0]),
    "left_turn": Box([8.0, 0.1], [10.0, 1.0]),
}


class VehicleModel(SystemModel):
    """Front-wheel-drive vehicle with the maneuver controller in the loop.

    State: [x, y, yaw, v_lon, v_lat, yaw_rate, I_u, I_r].  The two trailing
    states accumulate squared speed/heading tracking errors so the adaptive
    gain terms are exact rather than re-integrated.  theta = (m, l_f, l_r)
    parameterizes the plant; the controller only sees the nominals in
    ``params``.  Below ``x4_crit`` the lateral-velocity and yaw-rate rows
    switch to the low-speed model with the steering angle recovered from
    the commanded front lateral force.
    """

    state_dim = 8
    measurement_dim = 2

    def __init__(self, maneuver: str, params: Optional[VehicleParams] = None,
                 x0=None, theta_box: Optional[Box] = None,
                 k_box: Optional[Box] = None, noise_cov=None,
                 footprint: Optional[Zonotope] = None):
        vp = params if params is not None else VehicleParams()
        if vp.t_m is None:
            vp = replace(vp, t_m=_DEFAULT_T_M[maneuver])
        self.maneuver = maneuver
        self.params = vp
        base = np.zeros(6) if x0 is None else np.asarray(x0, dtype=float)
        if base.size == 6:
            base = np.concatenate([base, [0.0, 0.0]])
        if base.size != 8:
            raise ValueError(f"vehicle x0 must have 6 (or 8) entries, got {base.size}")
        self.x0 = base
        nominal = np.array([vp.m, vp.l_f, vp.l_r])
        self.param_box = theta_box if theta_box is not None \
            else Box(0.95 * nominal, 1.05 * nominal)
        if self.param_box.dim != 3:
            raise ValueError("vehicle theta box must be 3-D: (m, l_f, l_r)")
        self.k_box = k_box if k_box is not None else DEFAULT_K_BOX[maneuver]
        if self.k_box.dim != 2:
            raise ValueError("vehicle k box must be 2-D: (k1, k2)")
        self.noise_cov = np.asarray(noise_cov, dtype=float) if noise_cov is not None \
            else 0.01 * np.eye(2)
        self.footprint = footprint if footprint is not None else DEFAULT_FOOTPRINT
        self.desired = DesiredTrajectory(maneuver, vp, x3_0=float(base[2]),
                                         x4_0=float(base[3]))
        self.default_step = 1e-3
        self.max_step = 1e-2

    def measure_batch(self, X):
        return np.array(X[:, 3:5], dtype=float)

    def phase_times(self, k):
        return self.desired.phase_times(k)

    def event_value_batch(self, X):
        # Regime switch at x4_crit plus the steering-recovery floor kink.
        return np.stack([X[:, 3] - self.params.x4_crit,
                         X[:, 3] - _DELTA_SPEED_FLOOR], axis=1)

    def maneuver_end_time(self, k):
        k1 = float(np.asarray(k, dtype=float).ravel()[0])
        return self.desired.stop_time(k1)

    def occupancy(self, x) -> Zonotope:
        x = np.asarray(x, dtype=float)
        R = rotation2d(float(x[2]))
        return Zonotope(x[:2] + R @ self.footprint.center, R @ self.footprint.generators)

    def occupancy_hull_batch(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned hulls of the rotated footprint: (centers, halfwidths)."""
        cos, sin = np.cos(X[:, 2]), np.sin(X[:, 2])
        fc = self.footprint.center
        G = self.footprint.generators
        centers = np.stack([
            X[:, 0] + cos * fc[0] - sin * fc[1],
            X[:, 1] + sin * fc[0] + cos * fc[1],
        ], axis=1)
        gx, gy = G[0], G[1]
        half_x = np.abs(np.outer(cos, gx) - np.outer(sin, gy)).sum(axis=1)
        half_y = np.abs(np.outer(sin, gx) + np.outer(cos, gy)).sum(axis=1)
        return centers, np.stack([half_x, half_y], axis=1)

    def derivative(self, t, x, k, theta):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite state at t={t}")
        return super().derivative(t, x, k, theta)

    def derivative_batch(self, t, X, k, Thetas, regime=None):
        vp = self.params
        des = self.desired.values(float(t), k)
        if regime is None:
            regime = self.event_value_batch(np.atleast_2d(X)) >= 0.0
        if _vehicle_rhs is not None:
            X = np.ascontiguousarray(X, dtype=float)
            return _vehicle_rhs(
                X, np.ascontiguousarray(regime[:, 0]),
                np.ascontiguousarray(regime[:, 1]),
                np.ascontiguousarray(Thetas[:, 0]),
                np.ascontiguousarray(Thetas[:, 1]),
                np.ascontiguousarray(Thetas[:, 2]),
                des.x3, des.x4, des.x6, des.dx4, des.dx6,
                vp.m, vp.l_f, vp.l_r, vp.I_zz, vp.c_alpha_f, vp.c_alpha_r,
                vp.K_u, vp.K_h, vp.K_r,
                vp.kappa1_u, vp.kappa2_u, vp.phi1_u, vp.phi2_u,
                vp.kappa1_r, vp.kappa2_r, vp.phi1_r, vp.phi2_r,
                vp.M_u, vp.M_r)
        return self._derivative_batch_numpy(t, X, k, Thetas, des, regime)

    def _derivative_batch_numpy(self, t, X, k, Thetas, des, regime):
        vp = self.params
        x3, x4, x5, x6 = X[:, 2], X[:, 3], X[:, 4], X[:, 5]
        I_u, I_r = X[:, 6], X[:, 7]
        m_t, lf_t, lr_t = Thetas[:, 0], Thetas[:, 1], Thetas[:, 2]
        high, floored = regime[:, 0], regime[:, 1]

        # Controller side: nominal parameters, adaptive gains from integrals.
        e_u = x4 - des.x4
        tau_u = -((vp.kappa1_u + vp.kappa2_u * I_u) * vp.M_u
                  + (vp.phi1_u + vp.phi2_u * I_u)) * e_u
        F_xf = vp.m * (-vp.K_u * e_u + des.dx4 - x5 * x6 + tau_u)

        x4_floor = np.where(floored, np.maximum(x4, 1e-6), _DELTA_SPEED_FLOOR)
        F_yr_nom = vp.c_alpha_r * (-(x5 - vp.l_r * x6) / x4_floor)
        e3 = x3 - des.x3
        e6 = x6 - des.x6
        e_r = vp.K_r * e6 + vp.K_h * e3
        tau_r = -((vp.kappa1_r + vp.kappa2_r * I_r) * vp.M_r
                  + (vp.phi1_r + vp.phi2_r * I_r)) * e_r
        F_yf = (vp.I_zz / vp.l_f) * (-vp.K_r * e6 + des.dx6 - vp.K_h * e3 + tau_r) \
            + (vp.l_r / vp.l_f) * F_yr_nom

        # Plant side: true theta in the rigid-body terms.
        x4_safe = np.where(high, np.maximum(x4, 1e-6), 1.0)
        F_yr = vp.c_alpha_r * (-(x5 - lr_t * x6) / x4_safe)

        dx1 = x4 * np.cos(x3) - x5 * np.sin(x3)
        dx2 = x4 * np.sin(x3) + x5 * np.cos(x3)
        dx3 = x6
        dx4 = F_xf / m_t + x5 * x6
        dx5_hi = (F_yf + F_yr) / m_t - x4 * x6
        dx6_hi = (lf_t * F_yf - lr_t * F_yr) / vp.I_zz

        l_t = lf_t + lr_t
        delta = F_yf / vp.c_alpha_f + (x5 + vp.l_f * x6) / x4_floor
        C_us = (m_t / l_t) * (lr_t / vp.c_alpha_f - lf_t / vp.c_alpha_r)
        dx5_lo = lr_t * x6 - (m_t * lf_t / (vp.c_alpha_r * l_t)) * x4 * x4 * x6
        dx6_lo = delta * x4 / (l_t + C_us * x4 * x4)

        dx5 = np.where(high, dx5_hi, dx5_lo)
        dx6 = np.where(high, dx6_hi, dx6_lo)
        dI_u = e_u**2
        dI_r = e6**2 + e3**2
        return np.stack([dx1, dx2, dx3, dx4, dx5, dx6, dI_u, dI_r], axis=1)
