"""Constrained maximization of the information bound over the parameter box.

Multi-start projected gradient ascent on the bound minus an exterior
quadratic penalty on violated margins, with a wall-clock budget and the
braking/stationary fallbacks: if no feasible parameter is found in time,
the result degrades to continuing the previous plan's braking phase, or to
staying put when there is no previous plan.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import eig as eig_mod
from . import simulate
from .geometry import SCALE_TOL, intersection_empty
from .safety import MarginEvaluator, ObstacleSet, ReachAtlas, constraint_margins


@dataclass
class PlannerOptions:
    n_starts: int = 8
    max_iters: int = 30
    rho0: float = 10.0
    rho_escalations: int = 3
    margin_buffer: float = 0.05
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 20
    step_tol: float = 1e-6
    init_step: float = 0.1
    active_set_threshold: float = 2.0


@dataclass
class PlanResult:
    status: str                      # optimal | feasible-suboptimal | fallback-brake | fallback-stay
    k_star: Optional[np.ndarray]
    j_tilde: Optional[float]
    margins: list                    # Margin rows at k_star
    iterations: int
    wall_time_s: float
    starts_attempted: int
    trace: list = field(default_factory=list)   # (iteration, j_tilde, max_penalty, step)

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "feasible-suboptimal")


@dataclass
class FallbackAction:
    kind: str                        # brake | stay
    k: Optional[np.ndarray] = None


def fallback(previous: Optional[PlanResult] = None) -> FallbackAction:
    """Brake along the previous plan's parameter, or stay stationary."""
    if previous is not None and previous.k_star is not None:
        return FallbackAction("brake", np.array(previous.k_star, dtype=float))
    return FallbackAction("stay")


def _latin_hypercube(rng: np.random.Generator, box, n: int) -> np.ndarray:
    if n <= 0:
        return np.zeros((0, box.dim))
    samples = np.empty((n, box.dim))
    for d in range(box.dim):
        if box.widths[d] == 0.0:
            samples[:, d] = box.lower[d]
            continue
        strata = (rng.permutation(n) + rng.uniform(size=n)) / n
        samples[:, d] = box.lower[d] + strata * box.widths[d]
    return samples


@dataclass
class _StartOutcome:
    index: int
    best_j: float = -np.inf
    best_k: Optional[np.ndarray] = None
    converged: bool = False
    iterations: int = 0
    trace: list = field(default_factory=list)


def _run_start(index: int, k_init: np.ndarray, ctx, margins: Optional[MarginEvaluator],
               options: PlannerOptions, deadline: float) -> _StartOutcome:
    box = ctx.model.k_box
    widths = np.where(box.widths > 0.0, box.widths, 1.0)
    clip = lambda k: np.clip(k, box.lower, box.upper)
    out = _StartOutcome(index)
    k = clip(np.array(k_init, dtype=float))
    rho = options.rho0
    escalations = 0

    def merit_parts(kq):
        j = eig_mod.eig_total(ctx, kq)
        if margins is None:
            return j, 0.0, np.inf
        values = np.array([m.s for m in margins.margins(kq)])
        if values.size == 0:
            return j, 0.0, np.inf
        viol = np.maximum(0.0, 1.0 + options.margin_buffer - values)
        return j, float((viol**2).sum()), float(values.min())

    while out.iterations < options.max_iters:
        if time.monotonic() > deadline:
            break
        j_val, penalty, min_s = merit_parts(k)
        merit = j_val - rho * penalty
        if min_s > 1.0 + SCALE_TOL and j_val > out.best_j:
            out.best_j, out.best_k = j_val, k.copy()

        max_pen = max(0.0, 1.0 + options.margin_buffer - min_s)**2 \
            if np.isfinite(min_s) else 0.0
        grad = eig_mod.eig_gradient(ctx, k)[0]
        if margins is not None:
            for mg in margins.gradients(k, options.active_set_threshold):
                gap = 1.0 + options.margin_buffer - mg.s
                if gap > 0.0:
                    grad = grad + rho * 2.0 * gap * mg.grad

        direction = grad * widths**2
        scale = np.max(np.abs(direction) / widths)
        if scale > 0.0:
            direction = direction / scale
        alpha = options.init_step
        accepted = None
        for _ in range(options.max_backtracks):
            trial = clip(k + alpha * direction)
            step = trial - k
            if np.max(np.abs(step) / widths) < 1e-16:
                break
            j_t, pen_t, min_t = merit_parts(trial)
            if j_t - rho * pen_t >= merit + options.armijo_c * float(grad @ step):
                accepted = (trial, j_t, pen_t, min_t, step)
                break
            alpha *= options.backtrack
        out.iterations += 1
        if accepted is None:
            out.trace.append((out.iterations, j_val, max_pen, 0.0))
            if min_s <= 1.0 + SCALE_TOL and escalations < options.rho_escalations:
                rho *= 10.0
                escalations += 1
                continue
            out.converged = True
            break
        trial, j_t, pen_t, min_t, step = accepted
        step_rel = float(np.max(np.abs(step) / widths))
        max_pen_t = max(0.0, 1.0 + options.margin_buffer - min_t)**2 \
            if np.isfinite(min_t) else 0.0
        out.trace.append((out.iterations, j_t, max_pen_t, step_rel))
        k = trial
        if min_t > 1.0 + SCALE_TOL and j_t > out.best_j:
            out.best_j, out.best_k = j_t, k.copy()
        if step_rel < options.step_tol:
            if min_t <= 1.0 + SCALE_TOL and escalations < options.rho_escalations:
                rho *= 10.0
                escalations += 1
                continue
            out.converged = True
            break
    return out


def optimize(ctx, atlas: Optional[ReachAtlas], obstacles: Optional[ObstacleSet],
             k0, t_plan: float, options: Optional[PlannerOptions] = None,
             rng: Optional[np.random.Generator] = None, threads: int = 1,
             previous: Optional[PlanResult] = None) -> PlanResult:
    """Best feasible trajectory parameter found within the planning budget.

    Starts are k0 plus a Latin-hypercube set; each runs projected gradient
    ascent on the penalized bound.  Ties in the final value (within 1e-12)
    break toward the lowest start index, so the result is reproducible
    across thread counts.
    """
    options = options or PlannerOptions()
    rng = rng if rng is not None else np.random.default_rng(0)
    t_start = time.monotonic()
    deadline = t_start + t_plan
    box = ctx.model.k_box
    k0 = np.clip(np.atleast_1d(np.asarray(k0, dtype=float)), box.lower, box.upper)

    margins = None
    if atlas is not None and obstacles is not None and len(obstacles):
        margins = MarginEvaluator(atlas, obstacles)

    starts = [k0] + list(_latin_hypercube(rng, box, options.n_starts - 1))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(
                lambda si: _run_start(si[0], si[1], ctx, margins, options, deadline),
                enumerate(starts)))
    else:
        outcomes = [_run_start(i, s, ctx, margins, options, deadline)
                    for i, s in enumerate(starts)]

    best = None
    for oc in outcomes:
        if oc.best_k is None:
            continue
        if best is None or oc.best_j > best.best_j + 1e-12:
            best = oc
    trace = []
    row = 0
    for oc in outcomes:
        for entry in oc.trace:
            row += 1
            trace.append((row, entry[1], entry[2], entry[3]))
    iterations = sum(oc.iterations for oc in outcomes)
    wall = time.monotonic() - t_start

    if best is None:
        action = fallback(previous)
        status = "fallback-brake" if action.kind == "brake" else "fallback-stay"
        return PlanResult(status=status, k_star=action.k, j_tilde=None, margins=[],
                          iterations=iterations, wall_time_s=wall,
                          starts_attempted=len(outcomes), trace=trace)

    final_margins = [] if margins is None else \
        constraint_margins(margins.atlas, margins.obstacles, best.best_k)
    status = "optimal" if best.converged else "feasible-suboptimal"
    return PlanResult(status=status, k_star=best.best_k, j_tilde=best.best_j,
                      margins=final_margins, iterations=iterations,
                      wall_time_s=wall, starts_attempted=len(outcomes), trace=trace)


@dataclass
class VerifyReport:
    violations: list
    n_trials: int
    n_checks: int

    @property
    def clean(self) -> bool:
        return not self.violations


def verify_plan(ctx, result: PlanResult, obstacles: Optional[ObstacleSet],
                n_check: int = 10, rng: Optional[np.random.Generator] = None,
                h: Optional[float] = None, stop_speed: float = 0.05) -> VerifyReport:
    """Simulation audit of a plan: obstacle clearance while moving plus the
    stop condition, across random parameter draws.

    Violations are reported, not raised, so callers can decide how to react.
    """
    if result.k_star is None:
        raise ValueError("verify_plan needs a result with a trajectory parameter")
    rng = rng if rng is not None else np.random.default_rng(0)
    model = ctx.model
    k = result.k_star
    t_end = model.maneuver_end_time(k) or ctx.schedule.t_f
    thetas = ctx.prior.sample(rng, n_check)
    obstacles = obstacles if obstacles is not None else ObstacleSet([])

    violations = []
    checks = 0
    batch = simulate.integrate_rk4_batch(model, k, thetas, ctx.schedule,
                                         h=h, t_end=t_end)
    dt = ctx.schedule.dt
    for trial in range(n_check):
        states = batch.states[:, trial, :]
        speed = np.abs(states[:, 3]) if model.occupancy(model.x0) is not None \
            else np.zeros(len(states))
        if speed[-1] >= stop_speed:
            violations.append({"kind": "stop", "trial": trial,
                               "speed": float(speed[-1])})
        if not len(obstacles.obstacles):
            continue
        from .safety import _occupancy_hulls
        centers, halves = _occupancy_hulls(states, model.footprint)
        moving = speed >= stop_speed
        for oi, obs in enumerate(obstacles.obstacles):
            hull = obs.zonotope.interval_hull()
            o_c, o_h = hull.center, 0.5 * hull.widths
            overlap = np.all(np.abs(centers - o_c) <= halves + o_h + 1e-12, axis=1)
            for ti in np.where(overlap & moving)[0]:
                j = int(np.floor((batch.times[ti] - 1e-12) / dt)) + 1
                if not obs.active(j):
                    continue
                checks += 1
                empty, s = intersection_empty(model.occupancy(states[ti]), obs.zonotope)
                if not empty:
                    violations.append({
                        "kind": "collision", "trial": trial, "obstacle": oi,
                        "time": float(batch.times[ti]), "margin": float(s)})
                    break
    return VerifyReport(violations=violations, n_trials=n_check, n_checks=checks)
