"""Fixed-step RK4 integration with boundary clamping and event bisection.

Steps never straddle a known phase boundary of the maneuver, and regime
switches signalled by the model's event indicator (e.g. the high/low-speed
crossing) are located by bisection, so the integrator keeps its fourth-order
convergence even though the right-hand side is only piecewise smooth.
Measurement times are hit exactly; no interpolation happens anywhere.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

# Time resolution of the event-crossing bisection.
EVENT_TIME_TOL = 1e-9


class SimulationDiverged(RuntimeError):
    """Raised when a state stops being finite; carries the failure time."""

    def __init__(self, time: float, row: Optional[int] = None, detail: str = ""):
        self.time = time
        self.row = row
        extra = f" (batch row {row})" if row is not None else ""
        super().__init__(f"simulation diverged at t={time:.6f}{extra}{detail}")


@dataclass
class MeasurementSchedule:
    """Evenly spaced measurement times j*dt for j = 1..t_f/dt."""

    dt: float
    t_f: float

    def __post_init__(self):
        if self.dt <= 0.0 or self.t_f <= 0.0:
            raise ValueError("schedule dt and t_f must be positive")
        ratio = self.t_f / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"t_f/dt = {ratio} must be an integer")

    @property
    def n_measurements(self) -> int:
        return int(round(self.t_f / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_measurements + 1)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    measurement_times: np.ndarray
    measurement_means: np.ndarray


@dataclass
class BatchTrajectory:
    """One integration of the same k across a batch of theta rows."""

    times: np.ndarray                     # (M,)
    states: Optional[np.ndarray]          # (M, N, n) or None if not recorded
    measurement_times: np.ndarray         # (J,)
    measurement_means: np.ndarray         # (N, J, d)


def _rk4_step(model, t, X, k, Thetas, h, t_last=None, regime=None):
    """One classical RK4 step.

    ``t_last`` overrides the final stage time: segments ending on a phase
    boundary evaluate that stage just inside the segment, because the
    piecewise references are right-continuous and the boundary value
    already belongs to the next piece.  ``regime`` freezes the model's
    switching branches for all four stages so that steps bisected onto a
    regime crossing stay internally consistent.
    """
    kwargs = {} if regime is None else {"regime": regime}
    k1 = model.derivative_batch(t, X, k, Thetas, **kwargs)
    k2 = model.derivative_batch(t + 0.5 * h, X + 0.5 * h * k1, k, Thetas, **kwargs)
    k3 = model.derivative_batch(t + 0.5 * h, X + 0.5 * h * k2, k, Thetas, **kwargs)
    k4 = model.derivative_batch(t + h if t_last is None else t_last,
                                X + h * k3, k, Thetas, **kwargs)
    return X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4_batch(model, k, Thetas, schedule: MeasurementSchedule,
                        h: Optional[float] = None, t_end: Optional[float] = None,
                        record_states: bool = True) -> BatchTrajectory:
    """Integrate all theta rows of a batch simultaneously over [0, t_end].

    ``t_end`` defaults to the schedule horizon; passing something larger
    (e.g. through the braking phase) extends the run while measurements are
    still only collected at the schedule times.
    """
    Thetas = np.atleast_2d(np.asarray(Thetas, dtype=float))
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if h is None:
        h = model.default_step
    if h <= 0.0:
        raise ValueError("step size must be positive")
    if model.max_step is not None and h > model.max_step * (1.0 + 1e-12):
        raise ValueError(f"step {h} exceeds the model's maximum step {model.max_step}")
    ratio = schedule.dt / h
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"step {h} must divide the schedule dt {schedule.dt}")
    t_end = schedule.t_f if t_end is None else float(t_end)
    if t_end < schedule.t_f:
        raise ValueError("t_end cannot be smaller than the schedule horizon")

    meas_times = schedule.times
    boundaries = {float(tb) for tb in model.phase_times(k) if 0.0 < tb < t_end}
    checkpoints = sorted(set(meas_times.tolist()) | boundaries | {t_end})
    meas_index = {float(tm): j for j, tm in enumerate(meas_times)}

    n_rows = Thetas.shape[0]
    X = np.tile(np.asarray(model.x0, dtype=float), (n_rows, 1))
    times = [0.0]
    states = [X.copy()] if record_states else None
    means = np.empty((n_rows, meas_times.size, model.measurement_dim))

    ev = model.event_value_batch(X)
    ind = None if ev is None else ev >= 0.0

    t = 0.0
    for b in checkpoints:
        n_sub = max(1, int(np.ceil((b - t) / h - 1e-9)))
        h_seg = (b - t) / n_sub
        guard = 10 * n_sub + 200
        while b - t > 1e-12:
            guard -= 1
            if guard <= 0:
                raise RuntimeError(f"integrator stalled near t={t}")
            h_step = min(h_seg, b - t)
            if (b - t) - h_step < 1e-12:
                h_step = b - t
            t_last = None
            if t + h_step >= b and b in boundaries:
                t_last = b - EVENT_TIME_TOL
            X_new = _rk4_step(model, t, X, k, Thetas, h_step, t_last=t_last,
                              regime=ind)
            if ind is not None:
                ind_new = model.event_value_batch(X_new) >= 0.0
                if np.any(ind_new != ind):
                    lo, hi, X_hi = 0.0, h_step, X_new
                    while hi - lo > EVENT_TIME_TOL:
                        mid = 0.5 * (lo + hi)
                        X_mid = _rk4_step(model, t, X, k, Thetas, mid, regime=ind)
                        if np.any((model.event_value_batch(X_mid) >= 0.0) != ind):
                            hi, X_hi = mid, X_mid
                        else:
                            lo = mid
                    X_new, h_step = X_hi, hi
                ind = model.event_value_batch(X_new) >= 0.0
            if not np.all(np.isfinite(X_new)):
                bad = int(np.where(~np.isfinite(X_new).all(axis=1))[0][0])
                raise SimulationDiverged(t + h_step, row=bad)
            t = t + h_step
            X = X_new
            times.append(t)
            if record_states:
                states.append(X.copy())
        t = b
        times[-1] = b
        j = meas_index.get(float(b))
        if j is not None:
            means[:, j, :] = model.measure_batch(X)

    return BatchTrajectory(
        times=np.asarray(times),
        states=np.stack(states, axis=0) if record_states else None,
        measurement_times=meas_times,
        measurement_means=means,
    )


def integrate_rk4(model, k, theta, schedule: MeasurementSchedule,
                  h: Optional[float] = None, t_end: Optional[float] = None) -> Trajectory:
    """Classical RK4 flow of one (k, theta) pair from the model's x0."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    batch = integrate_rk4_batch(model, k, theta[None, :], schedule, h=h, t_end=t_end)
    return Trajectory(
        times=batch.times,
        states=batch.states[:, 0, :],
        measurement_times=batch.measurement_times,
        measurement_means=batch.measurement_means[0],
    )


def sample_measurements(traj: Trajectory, sigma, rng) -> np.ndarray:
    """Noisy measurements y_j = g(x(t_j)) + L z_j, bit-reproducible per seed."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    L = np.linalg.cholesky(sigma)
    z = rng.standard_normal(traj.measurement_means.shape)
    return traj.measurement_means + z @ L.T


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Columns t, x1..xn, then g1..gd filled only on schedule rows."""
    n = traj.states.shape[1]
    d = traj.measurement_means.shape[1] if traj.measurement_means.size else 0
    meas_by_time = {float(tm): traj.measurement_means[j]
                    for j, tm in enumerate(traj.measurement_times)}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"x{i+1}" for i in range(n)]
                        + [f"g{i+1}" for i in range(d)])
        for t, x in zip(traj.times, traj.states):
            row = [repr(float(t))] + [repr(float(v)) for v in x]
            g = meas_by_time.get(float(t))
            row += [repr(float(v)) for v in g] if g is not None else [""] * d
            writer.writerow(row)
