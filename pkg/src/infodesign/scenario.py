"""Scenario files: the single configuration surface of the toolkit.

Scenarios are versioned JSON documents.  Validation is strict: unknown
fields are rejected rather than ignored, every diagnostic names the field
that caused it, and all randomness downstream flows from the scenario seed
through named sub-streams.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import eig as eig_mod
from .cubature import tensor_rule
from .geometry import Box, Zonotope
from .planner import PlannerOptions
from .probability import UniformBoxPrior
from .safety import Obstacle, ObstacleSet, ReachAtlas, load_reach_atlas, sample_reach_atlas
from .simulate import MeasurementSchedule
from .systems import MANEUVERS, StaticBenchmark, VehicleModel, VehicleParams

SCENARIO_VERSION = 1

# Fixed identifiers of the named randomness sub-streams.
STREAMS = {"measurement": 0, "planner": 1, "evaluation": 2, "atlas": 3,
           "verification": 4, "mc": 5}


def rng_stream(seed: int, name: str, index: Optional[int] = None) -> np.random.Generator:
    """Named, order-independent child generator of the scenario seed."""
    key = (STREAMS[name],) if index is None else (STREAMS[name], int(index))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


class ScenarioError(ValueError):
    """Scenario validation failure; ``errors`` lists field-level diagnostics."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n" + "\n".join(f"  {e}" for e in self.errors))


_TOP_FIELDS = {"version", "model", "seed", "schedule", "theta_box", "k_box",
               "cubature_n", "noise_cov", "rk4_h", "maneuver", "x0",
               "vehicle_params", "footprint", "obstacles", "reach_atlas",
               "planner"}
_SCHEDULE_FIELDS = {"dt", "t_f"}
_BOX_FIELDS = {"lower", "upper"}
_ZONO_FIELDS = {"center", "generators"}
_OBSTACLE_FIELDS = {"center", "generators", "j_start", "j_end"}
_ATLAS_FIELDS = {"source", "path", "n_k", "n_theta", "bloat"}
_PLANNER_FIELDS = {"k0", "t_plan", "n_starts", "max_iters", "rho0",
                   "rho_escalations", "margin_buffer", "step_tol", "init_step",
                   "active_set_threshold"}
_VEHICLE_PARAM_FIELDS = {f.name for f in dataclasses.fields(VehicleParams)}


def _check_unknown(obj: dict, allowed: set, where: str, errors: list):
    for key in obj:
        if key not in allowed:
            errors.append(f"{where}{key}: unknown field")


def _as_box(obj, where: str, errors: list) -> Optional[Box]:
    if not isinstance(obj, dict):
        errors.append(f"{where}: must be an object with lower/upper")
        return None
    _check_unknown(obj, _BOX_FIELDS, where + ".", errors)
    try:
        return Box(obj["lower"], obj["upper"])
    except (KeyError, ValueError, TypeError) as exc:
        errors.append(f"{where}: {exc}")
        return None


def _as_zonotope(obj, where: str, errors: list) -> Optional[Zonotope]:
    if not isinstance(obj, dict):
        errors.append(f"{where}: must be an object with center/generators")
        return None
    _check_unknown(obj, _ZONO_FIELDS, where + ".", errors)
    try:
        return Zonotope(obj["center"], obj.get("generators", []))
    except (KeyError, ValueError, TypeError) as exc:
        errors.append(f"{where}: {exc}")
        return None


@dataclass
class Scenario:
    model: str
    seed: int
    schedule: MeasurementSchedule
    maneuver: Optional[str] = None
    theta_box: Optional[Box] = None
    k_box: Optional[Box] = None
    cubature_n: Optional[list] = None
    noise_cov: Optional[np.ndarray] = None
    rk4_h: Optional[float] = None
    x0: Optional[np.ndarray] = None
    vehicle_params: Optional[VehicleParams] = None
    footprint: Optional[Zonotope] = None
    obstacles: list = field(default_factory=list)
    atlas_spec: Optional[dict] = None
    planner_opts: dict = field(default_factory=dict)

    # -- builders ------------------------------------------------------------

    def build_model(self):
        if self.model == "static_benchmark":
            noise = self.noise_cov if self.noise_cov is not None else np.array([[1e-4]])
            model = StaticBenchmark(noise_var=float(noise[0, 0]))
            if self.theta_box is not None:
                model.param_box = self.theta_box
            if self.k_box is not None:
                model.k_box = self.k_box
            if self.x0 is not None:
                model.x0 = self.x0
            return model
        return VehicleModel(
            self.maneuver, params=self.vehicle_params, x0=self.x0,
            theta_box=self.theta_box, k_box=self.k_box,
            noise_cov=self.noise_cov, footprint=self.footprint)

    def default_cubature_n(self, model) -> list:
        if self.cubature_n is not None:
            return list(self.cubature_n)
        return [9] * model.param_box.dim if self.model == "static_benchmark" \
            else [3] * model.param_box.dim

    def build_context(self, model=None) -> eig_mod.EigContext:
        model = model if model is not None else self.build_model()
        rule = tensor_rule(model.param_box, self.default_cubature_n(model))
        prior = UniformBoxPrior(model.param_box)
        return eig_mod.EigContext(model, prior, rule, self.schedule, h=self.rk4_h)

    def build_obstacles(self) -> ObstacleSet:
        return ObstacleSet(list(self.obstacles))

    def build_atlas(self, model) -> Optional[ReachAtlas]:
        spec = self.atlas_spec
        if spec is None:
            return None
        if spec["source"] == "file":
            return load_reach_atlas(spec["path"])
        return sample_reach_atlas(
            model, None, model.k_box, model.param_box, self.schedule,
            getattr(model, "footprint", None),
            n_k=int(spec.get("n_k", 5)), n_theta=int(spec.get("n_theta", 2)),
            bloat=float(spec.get("bloat", 0.05)), h=self.rk4_h)

    def planner_options(self) -> PlannerOptions:
        kwargs = {key: val for key, val in self.planner_opts.items()
                  if key not in ("k0", "t_plan")}
        return PlannerOptions(**kwargs)

    def planner_budget(self) -> float:
        if "t_plan" in self.planner_opts:
            return float(self.planner_opts["t_plan"])
        if self.vehicle_params is not None:
            return self.vehicle_params.t_plan
        return 3.0

    def initial_k(self, model) -> np.ndarray:
        if "k0" in self.planner_opts:
            return np.asarray(self.planner_opts["k0"], dtype=float)
        return model.k_box.center


def validate_scenario(doc) -> Scenario:
    """Parse a scenario document, collecting every field-level diagnostic."""
    errors: list = []
    if not isinstance(doc, dict):
        raise ScenarioError(["document: must be a JSON object"])
    _check_unknown(doc, _TOP_FIELDS, "", errors)

    if doc.get("version") != SCENARIO_VERSION:
        errors.append(f"version: must be {SCENARIO_VERSION}, got {doc.get('version')!r}")
    model = doc.get("model")
    if model not in ("static_benchmark", "vehicle"):
        errors.append(f"model: must be 'static_benchmark' or 'vehicle', got {model!r}")
        raise ScenarioError(errors)

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        errors.append(f"seed: must be an unsigned 64-bit integer, got {seed!r}")
        seed = 0

    schedule = None
    sched_doc = doc.get("schedule")
    if not isinstance(sched_doc, dict):
        errors.append("schedule: required object with dt and t_f")
    else:
        _check_unknown(sched_doc, _SCHEDULE_FIELDS, "schedule.", errors)
        try:
            schedule = MeasurementSchedule(float(sched_doc["dt"]), float(sched_doc["t_f"]))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"schedule: {exc}")

    theta_box = _as_box(doc["theta_box"], "theta_box", errors) if "theta_box" in doc else None
    k_box = _as_box(doc["k_box"], "k_box", errors) if "k_box" in doc else None

    cubature_n = doc.get("cubature_n")
    if cubature_n is not None:
        if not (isinstance(cubature_n, list) and cubature_n
                and all(isinstance(n, int) and n >= 1 for n in cubature_n)):
            errors.append(f"cubature_n: must be a list of positive integers, got {cubature_n!r}")
            cubature_n = None

    noise_cov = None
    if "noise_cov" in doc:
        try:
            noise_cov = np.atleast_2d(np.asarray(doc["noise_cov"], dtype=float))
            if noise_cov.shape[0] != noise_cov.shape[1]:
                raise ValueError(f"must be square, got shape {noise_cov.shape}")
            np.linalg.cholesky(noise_cov)
        except (TypeError, ValueError, np.linalg.LinAlgError) as exc:
            errors.append(f"noise_cov: {exc}")
            noise_cov = None

    rk4_h = doc.get("rk4_h")
    if rk4_h is not None:
        if not isinstance(rk4_h, (int, float)) or rk4_h <= 0:
            errors.append(f"rk4_h: must be a positive number, got {rk4_h!r}")
            rk4_h = None
        elif schedule is not None:
            ratio = schedule.dt / rk4_h
            if abs(ratio - round(ratio)) > 1e-9:
                errors.append(f"rk4_h: {rk4_h} must divide the schedule dt {schedule.dt}")

    x0 = None
    if "x0" in doc:
        try:
            x0 = np.asarray(doc["x0"], dtype=float)
            if x0.ndim != 1 or not np.all(np.isfinite(x0)):
                raise ValueError("must be a finite 1-D vector")
        except (TypeError, ValueError) as exc:
            errors.append(f"x0: {exc}")
            x0 = None

    maneuver = doc.get("maneuver")
    vehicle_params = None
    footprint = None
    obstacles: list = []
    atlas_spec = None

    if model == "vehicle":
        if maneuver not in MANEUVERS:
            errors.append(f"maneuver: required, one of {MANEUVERS}, got {maneuver!r}")
        vp_doc = doc.get("vehicle_params", {})
        if not isinstance(vp_doc, dict):
            errors.append("vehicle_params: must be an object")
        else:
            _check_unknown(vp_doc, _VEHICLE_PARAM_FIELDS, "vehicle_params.", errors)
            try:
                vehicle_params = VehicleParams(
                    **{k: v for k, v in vp_doc.items() if k in _VEHICLE_PARAM_FIELDS})
            except (TypeError, ValueError) as exc:
                errors.append(f"vehicle_params: {exc}")
        if "footprint" in doc:
            footprint = _as_zonotope(doc["footprint"], "footprint", errors)
            if footprint is not None and footprint.dim != 2:
                errors.append(f"footprint: must be 2-D, got {footprint.dim}-D")
        if theta_box is not None and theta_box.dim != 3:
            errors.append(f"theta_box: vehicle needs 3 axes (m, l_f, l_r), got {theta_box.dim}")
        if k_box is not None and k_box.dim != 2:
            errors.append(f"k_box: vehicle needs 2 axes (k1, k2), got {k_box.dim}")
        if x0 is not None and x0.size not in (6, 8):
            errors.append(f"x0: vehicle needs 6 state entries, got {x0.size}")
        if noise_cov is not None and noise_cov.shape != (2, 2):
            errors.append(f"noise_cov: vehicle measurements are 2-D, got shape {noise_cov.shape}")
        if rk4_h is not None and rk4_h > 1e-2 * (1 + 1e-12):
            errors.append(f"rk4_h: vehicle integration needs h <= 0.01, got {rk4_h}")
        for idx, ob in enumerate(doc.get("obstacles", [])):
            where = f"obstacles[{idx}]"
            if not isinstance(ob, dict):
                errors.append(f"{where}: must be an object")
                continue
            _check_unknown(ob, _OBSTACLE_FIELDS, where + ".", errors)
            zono = _as_zonotope({k: v for k, v in ob.items() if k in _ZONO_FIELDS},
                                where, errors)
            if zono is None:
                continue
            if zono.dim != 2:
                errors.append(f"{where}: obstacles live in the 2-D world")
                continue
            j_start, j_end = ob.get("j_start"), ob.get("j_end")
            for tag, j in (("j_start", j_start), ("j_end", j_end)):
                if j is not None and (not isinstance(j, int) or j < 1):
                    errors.append(f"{where}.{tag}: must be a positive interval index")
            if isinstance(j_start, int) and isinstance(j_end, int) and j_start > j_end:
                errors.append(f"{where}: j_start {j_start} exceeds j_end {j_end}")
            else:
                obstacles.append(Obstacle(zono, j_start, j_end))
        atlas_doc = doc.get("reach_atlas")
        if atlas_doc is not None:
            if not isinstance(atlas_doc, dict):
                errors.append("reach_atlas: must be an object")
            else:
                _check_unknown(atlas_doc, _ATLAS_FIELDS, "reach_atlas.", errors)
                source = atlas_doc.get("source")
                if source not in ("file", "sample"):
                    errors.append(f"reach_atlas.source: must be 'file' or 'sample', got {source!r}")
                elif source == "file" and not isinstance(atlas_doc.get("path"), str):
                    errors.append("reach_atlas.path: required for source 'file'")
                else:
                    atlas_spec = dict(atlas_doc)
                    for tag in ("n_k", "n_theta"):
                        val = atlas_doc.get(tag)
                        if val is not None and (not isinstance(val, int) or val < 2):
                            errors.append(f"reach_atlas.{tag}: must be an integer >= 2")
                    bloat = atlas_doc.get("bloat")
                    if bloat is not None and (not isinstance(bloat, (int, float)) or bloat < 0):
                        errors.append("reach_atlas.bloat: must be nonnegative")
        if obstacles and atlas_spec is None:
            errors.append("reach_atlas: required when obstacles are present")
    else:
        for bad in ("maneuver", "vehicle_params", "footprint", "obstacles", "reach_atlas"):
            if bad in doc:
                errors.append(f"{bad}: not applicable to the static benchmark")
        if theta_box is not None and theta_box.dim != 1:
            errors.append(f"theta_box: benchmark parameter is scalar, got {theta_box.dim}-D")
        if k_box is not None and k_box.dim != 1:
            errors.append(f"k_box: benchmark input is scalar, got {k_box.dim}-D")
        if x0 is not None and x0.size != 1:
            errors.append(f"x0: benchmark state is scalar, got {x0.size} entries")
        if noise_cov is not None and noise_cov.shape != (1, 1):
            errors.append(f"noise_cov: benchmark measurements are scalar, got shape {noise_cov.shape}")

    planner_opts: dict = {}
    pl_doc = doc.get("planner", {})
    if not isinstance(pl_doc, dict):
        errors.append("planner: must be an object")
    else:
        _check_unknown(pl_doc, _PLANNER_FIELDS, "planner.", errors)
        planner_opts = {k: v for k, v in pl_doc.items() if k in _PLANNER_FIELDS}
        k0 = planner_opts.get("k0")
        if k0 is not None:
            try:
                np.asarray(k0, dtype=float)
            except (TypeError, ValueError):
                errors.append(f"planner.k0: must be a numeric vector, got {k0!r}")
                planner_opts.pop("k0")

    theta_dim = theta_box.dim if theta_box is not None \
        else (1 if model == "static_benchmark" else 3)
    if cubature_n is not None and len(cubature_n) != theta_dim:
        errors.append(
            f"cubature_n: needs one entry per theta axis "
            f"({theta_dim}), got {len(cubature_n)}")
    t_plan = planner_opts.get("t_plan")
    if t_plan is not None and (not isinstance(t_plan, (int, float)) or t_plan <= 0):
        errors.append(f"planner.t_plan: must be a positive number, got {t_plan!r}")

    if errors:
        raise ScenarioError(errors)
    return Scenario(model=model, seed=seed, schedule=schedule, maneuver=maneuver,
                    theta_box=theta_box, k_box=k_box, cubature_n=cubature_n,
                    noise_cov=noise_cov, rk4_h=rk4_h, x0=x0,
                    vehicle_params=vehicle_params, footprint=footprint,
                    obstacles=obstacles, atlas_spec=atlas_spec,
                    planner_opts=planner_opts)


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioError([f"file: {exc}"]) from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"file: not valid JSON ({exc})"]) from exc
    return validate_scenario(doc)
