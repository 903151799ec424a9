"""Command-line front end: tube | plan | verify | report.

Exit codes: 0 success; 2 invalid scenario or input mismatch; 3 computation
or solver failure; 4 infeasible erosion/plan; 5 chance constraint not met.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import ControlCurve, Trajectory
from .geometry import CoverBudgetError
from .optimizer import plan as run_plan_pipeline
from .plots import plot_cost_curves, plot_ensemble, plot_plan, plot_tube_curve
from .scenario import Scenario, ScenarioError, load_scenario
from .tube import tube_curve
from .verify import (cost_gap_bound_lipschitz, cost_gap_bound_smooth,
                     lipschitz_constants_from_box, mc_chance_constraint)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_COMPUTE = 3
EXIT_INFEASIBLE = 4
EXIT_UNSAFE = 5


def _provenance(scenario: Scenario, extra: dict | None = None) -> dict:
    out = {
        "tool": "tubeplan",
        "version": __version__,
        "scenario_name": scenario.name,
        "scenario_hash": scenario.digest,
    }
    if extra:
        out.update(extra)
    return out


def _write_csv(path: Path, header: list[str], columns, provenance: dict):
    with open(path, "w") as fh:
        for key, value in provenance.items():
            fh.write(f"# {key}={value}\n")
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")


def _say(args, msg: str):
    if not args.quiet:
        print(msg)


def cmd_tube(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        rates = scenario.resolve_rates()
        params = scenario.tube_params(rates.tube_rate)
    except (ScenarioError, ValueError, OSError) as err:
        print(f"invalid scenario: {err}", file=sys.stderr)
        return EXIT_INVALID
    try:
        grid = np.linspace(0.0, params.horizon, 201)
        curve = tube_curve(params, grid)
    except Exception as err:  # noqa: BLE001
        print(f"tube computation failed: {err}", file=sys.stderr)
        return EXIT_COMPUTE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(scenario, {
        "c": params.c, "c_method": rates.tube_estimate.method,
        "sigma": params.sigma, "n": params.n, "delta": params.delta,
        "eps": params.eps, "horizon": params.horizon,
        "dt_param": params.dt_param, "dt_defaulted": params.dt_defaulted,
    })
    _write_csv(out / "tube.csv", ["t", "r"], (curve.grid, curve.radii), prov)
    plot_tube_curve(curve.grid, curve.radii, out / "tube.svg",
                    title=f"tube radius ({scenario.name})")
    _say(args, f"tube: r(0)={curve.radii[0]:.4g} r(T)={curve.radii[-1]:.4g} "
               f"-> {out / 'tube.csv'}")
    return EXIT_OK


def cmd_plan(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (ScenarioError, ValueError, OSError) as err:
        print(f"invalid scenario: {err}", file=sys.stderr)
        return EXIT_INVALID
    try:
        result = run_plan_pipeline(scenario)
    except CoverBudgetError as err:
        print(f"cover construction failed: {err}", file=sys.stderr)
        return EXIT_COMPUTE
    except Exception as err:  # noqa: BLE001
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_COMPUTE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = result.metadata["tube_params"]
    rates = result.metadata["rates"]
    curve = result.metadata["radius_curve"]
    payload = {
        "provenance": _provenance(scenario),
        "status": result.status,
        "message": result.message,
        "j_d": result.j_d,
        "solver": {
            "outer_iterations": result.outer_iterations,
            "inner_iterations": result.inner_iterations,
            "violation": result.violation,
            "kkt_residual": result.kkt_residual,
        },
        "tube": {
            "c": params.c, "sigma": params.sigma, "n": params.n,
            "delta": params.delta, "eps": params.eps, "horizon": params.horizon,
            "dt_param": params.dt_param, "dt_defaulted": params.dt_defaulted,
            "grid": curve.grid, "radii": curve.radii,
        },
        "rates": {
            "tube_rate": rates.tube_rate,
            "tube_method": rates.tube_estimate.method,
            "l2_rate": rates.l2_rate,
            "l2_method": rates.l2_method,
            "notes": rates.notes,
        },
    }
    if result.trajectory is not None:
        payload["times"] = result.trajectory.grid
        payload["states"] = result.trajectory.states
        payload["controls"] = result.trajectory.controls
    _write_json(out / "plan.json", payload)
    if result.trajectory is not None:
        plot_plan(result.trajectory, scenario.obstacle_set(),
                  float(curve.radii[0]), float(curve.radii[-1]),
                  out / "plan.svg", title=f"plan ({scenario.name}), J_d={result.j_d:.4g}")
    if not result.feasible:
        print(f"plan infeasible: {result.message or result.status}", file=sys.stderr)
        return EXIT_INFEASIBLE
    _say(args, f"plan: status={result.status} J_d={result.j_d:.6g} -> {out / 'plan.json'}")
    return EXIT_OK


def _load_plan(path: Path, scenario: Scenario) -> dict:
    payload = json.loads(Path(path).read_text())
    if payload.get("provenance", {}).get("scenario_hash") != scenario.digest:
        raise ScenarioError("plan was produced from a different scenario")
    if "times" not in payload:
        raise ScenarioError("plan file has no trajectory")
    return payload


def cmd_verify(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        payload = _load_plan(Path(args.plan), scenario)
    except (ScenarioError, ValueError, OSError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    trials = args.trials or scenario.mc.trials
    seed = args.seed if args.seed is not None else scenario.mc.seed
    step = scenario.mc.step
    traj = Trajectory(np.asarray(payload["times"]), np.asarray(payload["states"]),
                      np.asarray(payload["controls"]))
    closed = scenario.build_closed_loop()
    if closed is None:
        print("verification requires a closed-loop system", file=sys.stderr)
        return EXIT_INVALID
    cost = scenario.cost_spec(traj.grid,
                              x_ref_curve=ControlCurve(traj.grid, traj.states))
    try:
        report = mc_chance_constraint(traj, closed, scenario.obstacle_set(), cost,
                                      trials=trials, step=step, seed=seed,
                                      sample_paths=100)
    except Exception as err:  # noqa: BLE001
        print(f"simulation failure: {err}", file=sys.stderr)
        return EXIT_COMPUTE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    delta = float(scenario.tube["delta"])
    extras = report.extras
    box_lo, box_hi = extras["state_box"]
    mc_payload = report.to_dict()
    mc_payload.update({
        "provenance": _provenance(scenario, {
            "plan_j_d": payload["j_d"], "trials": trials, "seed": seed, "step": step,
            "tube_c": payload["tube"]["c"], "dt_param": payload["tube"]["dt_param"],
            "dt_defaulted": payload["tube"]["dt_defaulted"],
        }),
        "delta": delta,
        "det_cost_sim_grid": extras["det_cost_sim_grid"],
        "state_box_lo": box_lo,
        "state_box_hi": box_hi,
    })
    _write_json(out / "mc.json", mc_payload)
    _write_csv(out / "cost_curve.csv",
               ["t", "cost_mean", "cost_se", "cost_det"],
               (extras["cost_curve_times"], extras["cost_curve_mean"],
                extras["cost_curve_se"], extras["cost_curve_det"]),
               _provenance(scenario, {"trials": trials, "seed": seed, "step": step}))
    plot_cost_curves(extras["cost_curve_times"], extras["cost_curve_mean"],
                     extras["cost_curve_se"], extras["cost_curve_det"],
                     out / "cost_curve.svg", title=f"cost ({scenario.name})")
    plot_ensemble(extras["sample_paths"], traj, scenario.obstacle_set(),
                  out / "ensemble.svg", title=f"ensemble ({scenario.name})")
    _say(args, f"verify: safety_fraction={report.safety_fraction:.6f} "
               f"(target >= {1 - delta}) violations={report.violation_count}")
    if report.safety_fraction < 1.0 - delta:
        print("chance constraint NOT met at the requested level", file=sys.stderr)
        return EXIT_UNSAFE
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        plan_payload = _load_plan(Path(args.plan), scenario)
        mc_payload = json.loads(Path(args.mc).read_text())
    except (ScenarioError, ValueError, OSError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    if mc_payload.get("provenance", {}).get("scenario_hash") != scenario.digest:
        print("mc report was produced from a different scenario", file=sys.stderr)
        return EXIT_INVALID
    times = np.asarray(plan_payload["times"])
    traj_states = np.asarray(plan_payload["states"])
    cost = scenario.cost_spec(times, x_ref_curve=ControlCurve(times, traj_states))
    box_lo = np.asarray(mc_payload["state_box_lo"], float)
    box_hi = np.asarray(mc_payload["state_box_hi"], float)
    L, L_T = lipschitz_constants_from_box(cost, box_lo, box_hi, times)
    rates = plan_payload["rates"]
    params = plan_payload["tube"]
    c_l2 = float(rates["l2_rate"])
    sigma = float(params["sigma"])
    n = int(params["n"])
    horizon = float(params["horizon"])
    j_d = float(mc_payload["det_cost_sim_grid"])
    mean_cost = float(mc_payload["mean_cost"])
    cost_se = float(mc_payload["cost_se"])
    gap = mean_cost - j_d
    lip_bound = cost_gap_bound_lipschitz(L, L_T, n, sigma, c_l2, horizon)
    report = {
        "provenance": _provenance(scenario, {"plan": str(args.plan), "mc": str(args.mc)}),
        "j_d_knots": plan_payload["j_d"],
        "j_d_sim_grid": j_d,
        "mean_stochastic_cost": mean_cost,
        "cost_standard_error": cost_se,
        "measured_gap": gap,
        "lipschitz_bound": {
            "value": lip_bound, "L": L, "L_T": L_T,
            "c": c_l2, "c_method": rates["l2_method"],
            "dominates": bool(gap <= lip_bound + 3.0 * cost_se),
        },
        "tube": {k: params[k] for k in ("c", "sigma", "n", "delta", "eps",
                                        "horizon", "dt_param", "dt_defaulted")},
        "contraction_provenance": rates,
    }
    if scenario.system.kind in ("double_integrator", "scalar_linear"):
        # L-smooth bound applies to linear dynamics; quadratic cost has
        # Hessian 2 (w_init + w_track) I for the running term
        L_s = 2.0 * (scenario.cost.w_init + scenario.cost.w_track)
        L_Ts = 2.0 * scenario.cost.w_terminal
        report["smooth_bound"] = {
            "value": cost_gap_bound_smooth(L_s, L_Ts, n, sigma, c_l2, horizon),
            "L": L_s, "L_T": L_Ts, "c": c_l2,
            "lambda_Q": scenario.cost.w_init + scenario.cost.w_track,
            "lambda_S": scenario.cost.w_terminal,
        }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report)
    _say(args, f"report: gap={gap:.6g} lipschitz_bound={lip_bound:.6g} "
               f"dominates={report['lipschitz_bound']['dominates']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubeplan",
        description="chance-constrained trajectory optimization via probabilistic "
                    "tubes and set erosion")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario YAML/JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override MC seed")
        p.add_argument("--trials", type=int, default=None, help="override MC trials")
        p.add_argument("--quiet", action="store_true")

    p_tube = sub.add_parser("tube", help="tube radius curve -> CSV + SVG")
    common(p_tube)
    p_tube.set_defaults(func=cmd_tube)

    p_plan = sub.add_parser("plan", help="solve the eroded deterministic problem")
    common(p_plan)
    p_plan.set_defaults(func=cmd_plan)

    p_verify = sub.add_parser("verify", help="Monte Carlo chance-constraint check")
    common(p_verify)
    p_verify.add_argument("--plan", required=True, help="plan.json from 'plan'")
    p_verify.set_defaults(func=cmd_verify)

    p_report = sub.add_parser("report", help="cost-gap summary with bounds")
    common(p_report)
    p_report.add_argument("--plan", required=True, help="plan.json from 'plan'")
    p_report.add_argument("--mc", required=True, help="mc.json from 'verify'")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
