"""Command-line surface: eig-curve, plan, evaluate, sample-atlas, validate.

Every command is a pure function of (scenario file, flags, seed): outputs
are CSV/JSON files written under --out with repr-exact floats, so reruns
with the same seed are byte-identical.  Timing goes to stderr only.
Exit codes: 0 success, 1 invalid input, 2 fallback plan.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import eig as eig_mod
from . import planner as planner_mod
from .safety import save_reach_atlas
from .scenario import ScenarioError, load_scenario, rng_stream
from .simulate import SimulationDiverged, integrate_rk4, sample_measurements


def _fmt(value) -> str:
    return repr(float(value))


def _parse_grid(spec: str) -> np.ndarray:
    try:
        start, step, stop = (float(v) for v in spec.split(":"))
    except ValueError as exc:
        raise ValueError(f"grid spec must be start:step:stop, got {spec!r}") from exc
    if step <= 0 or stop < start:
        raise ValueError(f"grid spec needs step > 0 and stop >= start, got {spec!r}")
    n = int(round((stop - start) / step)) + 1
    return np.linspace(start, stop, n)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    model = "vehicle/" + scenario.maneuver if scenario.model == "vehicle" \
        else scenario.model
    print(f"scenario OK: {model}, seed={scenario.seed}, "
          f"{scenario.schedule.n_measurements} measurements")
    return 0


def cmd_eig_curve(args) -> int:
    scenario = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else scenario.seed
    model = scenario.build_model()
    ctx = scenario.build_context(model)
    grids = [_parse_grid(spec) for spec in args.grid]
    if not grids or len(grids) > 2:
        print("error: eig-curve needs one or two --grid axes", file=sys.stderr)
        return 1
    if len(grids) != model.k_box.dim:
        print(f"error: model has a {model.k_box.dim}-D trajectory parameter; "
              f"got {len(grids)} --grid axes", file=sys.stderr)
        return 1

    with_oracle = args.with_oracle
    if with_oracle:
        widths = model.param_box.widths
        if model.measurement_dim != 1 or model.param_box.dim != 1 or widths[0] <= 0:
            print("error: --with-oracle needs a scalar measurement and a "
                  "non-degenerate 1-D theta box", file=sys.stderr)
            return 1

    header = [f"k{i+1}" for i in range(len(grids))] if len(grids) > 1 else ["u"]
    header.append("j_tilde")
    if args.mc_outer > 0:
        header.append("mc_estimate")
    if with_oracle:
        header.append("oracle")

    mesh = np.meshgrid(*grids, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    times = ctx.schedule.times
    rows = []
    for idx, k in enumerate(points):
        row = [_fmt(v) for v in k]
        row.append(_fmt(eig_mod.eig_total(ctx, k)))
        if args.mc_outer > 0:
            mc = sum(eig_mod.mc_eig(model, ctx.prior, k, tj, args.mc_outer,
                                    args.mc_inner, rng_stream(seed, "mc", idx),
                                    h=scenario.rk4_h)
                     for tj in times)
            row.append(_fmt(mc))
        if with_oracle:
            oracle = sum(
                eig_mod.true_eig_quadrature(
                    lambda tt, tj=tj: model.measurement_mean_batch(
                        tj, k, tt[:, None], h=scenario.rk4_h)[:, 0],
                    model.param_box, float(model.noise_cov[0, 0]))
                for tj in times)
            row.append(_fmt(oracle))
        rows.append(row)
    out = Path(args.out) / "eig_curve.csv"
    _write_csv(out, header, rows)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def cmd_plan(args) -> int:
    scenario = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else scenario.seed
    model = scenario.build_model()
    ctx = scenario.build_context(model)
    obstacles = scenario.build_obstacles()
    atlas = scenario.build_atlas(model)
    options = scenario.planner_options()
    t0 = time.monotonic()
    result = planner_mod.optimize(
        ctx, atlas, obstacles if len(obstacles) else None,
        scenario.initial_k(model), scenario.planner_budget(), options,
        rng=rng_stream(seed, "planner"), threads=args.threads)
    print(f"planning took {time.monotonic() - t0:.3f}s "
          f"({result.iterations} iterations)", file=sys.stderr)

    verify_doc = None
    if result.k_star is not None:
        report = planner_mod.verify_plan(
            ctx, result, obstacles, n_check=args.verify_checks,
            rng=rng_stream(seed, "verification"), h=scenario.rk4_h)
        verify_doc = {"violations": report.violations,
                      "n_trials": report.n_trials, "n_checks": report.n_checks}

    doc = {
        "status": result.status,
        "k_star": None if result.k_star is None else [float(v) for v in result.k_star],
        "j_tilde": result.j_tilde,
        # Unbounded margins (pairs that can never collide) serialize as null.
        "margins": [{"j": m.j, "i": m.i, "s": m.s if np.isfinite(m.s) else None}
                    for m in result.margins],
        "iterations": result.iterations,
        "wall_time_s": None,   # kept out of the document for reproducibility
        "starts_attempted": result.starts_attempted,
        "verify": verify_doc,
    }
    out_dir = Path(args.out)
    with open(out_dir / "plan_result.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _write_csv(out_dir / "plan_trace.csv",
               ["iteration", "j_tilde", "max_penalty", "step_size"],
               [[str(it), _fmt(j), _fmt(p), _fmt(s)] for it, j, p, s in result.trace])
    print(f"status={result.status} k_star={doc['k_star']}")
    return 0 if result.feasible else 2


def cmd_evaluate(args) -> int:
    scenario = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else scenario.seed
    model = scenario.build_model()
    prior = scenario.build_context(model).prior
    k = np.asarray([float(v) for v in args.k.split(",")], dtype=float)
    if k.size != model.k_box.dim:
        print(f"error: --k needs {model.k_box.dim} components", file=sys.stderr)
        return 1

    rows = []
    gains = []
    theta_cols = [f"theta{i+1}" for i in range(model.param_box.dim)]
    for trial in range(args.trials):
        rng = rng_stream(seed, "evaluation", trial)
        theta = prior.sample(rng, 1)[0]
        try:
            traj = integrate_rk4(model, k, theta, scenario.schedule,
                                 h=scenario.rk4_h,
                                 t_end=model.maneuver_end_time(k))
            y = sample_measurements(traj, model.noise_cov, rng)
            gain = eig_mod.realized_info_gain(model, prior, k, y,
                                              scenario.schedule, args.grid_n,
                                              h=scenario.rk4_h)
        except SimulationDiverged:
            rows.append([str(trial)] + [_fmt(v) for v in theta] + ["", "1"])
            continue
        gains.append(gain)
        rows.append([str(trial)] + [_fmt(v) for v in theta] + [_fmt(gain), "0"])
    pad = [""] * len(theta_cols)
    if gains:
        rows.append(["mean"] + pad + [_fmt(np.mean(gains)), ""])
        rows.append(["std"] + pad + [_fmt(np.std(gains)), ""])
    out = Path(args.out) / "evaluate.csv"
    _write_csv(out, ["trial"] + theta_cols + ["info_gain", "diverged"], rows)
    print(f"wrote {out} ({len(gains)}/{args.trials} trials)")
    return 0


def cmd_sample_atlas(args) -> int:
    scenario = load_scenario(args.scenario)
    model = scenario.build_model()
    if scenario.model != "vehicle":
        print("error: reach atlases only apply to the vehicle model", file=sys.stderr)
        return 1
    spec = scenario.atlas_spec or {}
    from .safety import sample_reach_atlas
    atlas = sample_reach_atlas(
        model, None, model.k_box, model.param_box, scenario.schedule,
        model.footprint,
        n_k=args.n_k or int(spec.get("n_k", 5)),
        n_theta=args.n_theta or int(spec.get("n_theta", 2)),
        bloat=args.bloat if args.bloat is not None else float(spec.get("bloat", 0.05)),
        h=scenario.rk4_h)
    out = Path(args.atlas_out) if args.atlas_out else Path(args.out) / "reach_atlas.json"
    save_reach_atlas(atlas, out)
    print(f"wrote {out} ({len(atlas.intervals)} intervals)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infodesign",
        description="Safe, maximally informative trajectory design")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("validate", help="check a scenario file")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eig-curve", help="information bound over a parameter grid")
    common(p)
    p.add_argument("--grid", action="append", default=[],
                   help="start:step:stop, once per parameter axis")
    p.add_argument("--mc-outer", type=int, default=0,
                   help="outer Monte Carlo samples (0 disables the MC column)")
    p.add_argument("--mc-inner", type=int, default=1000)
    p.add_argument("--with-oracle", action="store_true",
                   help="add the dense-quadrature reference column")
    p.set_defaults(func=cmd_eig_curve)

    p = sub.add_parser("plan", help="optimize a safe, informative trajectory")
    common(p)
    p.add_argument("--verify-checks", type=int, default=5,
                   help="random-parameter simulations in the plan audit")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("evaluate", help="realized information gain of a parameter")
    common(p)
    p.add_argument("--k", required=True, help="comma-separated trajectory parameter")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--grid-n", type=int, default=101,
                   help="posterior grid points per theta axis")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sample-atlas", help="fit an empirical reach atlas")
    common(p)
    p.add_argument("--n-k", type=int, default=None)
    p.add_argument("--n-theta", type=int, default=None)
    p.add_argument("--bloat", type=float, default=None)
    p.add_argument("--atlas-out", default=None, help="atlas file path")
    p.set_defaults(func=cmd_sample_atlas)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    try:
        return args.func(args)
    except ScenarioError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return 1
    except (ValueError, OSError, SimulationDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
