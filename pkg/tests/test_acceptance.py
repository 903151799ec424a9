"""Acceptance suite: one pass/fail line per criterion on stdout.

Run with `pytest -s tests/test_acceptance.py` to see the lines immediately;
under plain pytest they appear in the captured-output section of failures.
"""

import math

import numpy as np
import pytest

from tubeplan.contraction import (matrix_measure_l2, optimal_contraction_rate,
                                  spectral_abscissa)
from tubeplan.dynamics import (ControlCurve, make_double_integrator,
                               make_scalar_linear)
from tubeplan.geometry import Obstacle, ObstacleSet, constraint_values, \
    inflate_obstacles
from tubeplan.optimizer import plan
from tubeplan.scenario import load_scenario
from tubeplan.tube import TubeParams, epsilon_coeffs, mean_square_gap_bound, \
    tube_radius
from tubeplan.verify import (cost_gap_bound_lipschitz, cost_gap_bound_smooth,
                             lipschitz_closed_form_positive_rate,
                             lipschitz_closed_form_zero_rate,
                             lipschitz_constants_from_box,
                             lipschitz_gap_envelope, lipschitz_gap_integral,
                             mc_chance_constraint, mc_mean_square_gap,
                             mc_tube_containment)


def _verdict(num, name, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num} ({name}): {tag} {detail}".rstrip())
    return ok


@pytest.fixture(scope="module")
def di_run(scenario_dir):
    sc = load_scenario(scenario_dir / "double_integrator.yaml")
    result = plan(sc)
    report = None
    if result.feasible:
        traj = result.trajectory
        cost = sc.cost_spec(traj.grid, x_ref_curve=ControlCurve(traj.grid, traj.states))
        report = mc_chance_constraint(traj, sc.build_closed_loop(),
                                      sc.obstacle_set(), cost,
                                      trials=sc.mc.trials, step=sc.mc.step,
                                      seed=sc.mc.seed)
    return sc, result, report


@pytest.fixture(scope="module")
def uni_run(scenario_dir):
    sc = load_scenario(scenario_dir / "unicycle.yaml")
    result = plan(sc)
    report = None
    if result.feasible:
        traj = result.trajectory
        cost = sc.cost_spec(traj.grid, x_ref_curve=ControlCurve(traj.grid, traj.states))
        report = mc_chance_constraint(traj, sc.build_closed_loop(),
                                      sc.obstacle_set(), cost,
                                      trials=sc.mc.trials, step=sc.mc.step,
                                      seed=sc.mc.seed)
    return sc, result, report


def test_criterion_1_scalar_tube_containment(scenario_dir):
    fractions = {}
    for name in ("scalar_unstable", "scalar_contracting"):
        sc = load_scenario(scenario_dir / f"{name}.yaml")
        params = sc.tube_params()
        model = sc.build_nominal()
        report = mc_tube_containment(model, [0.0], None, params,
                                     trials=5000, step=1e-3, seed=sc.mc.seed)
        fractions[name] = report.containment_fraction
    ok = all(f >= 0.999 for f in fractions.values())
    detail = " ".join(f"{k}={v:.4f}" for k, v in fractions.items())
    assert _verdict(1, "scalar tube containment", ok, detail)


def test_criterion_2_epsilon_coefficients():
    import mpmath as mp
    mp.mp.dps = 40
    e2_oracle = mp.mpf(2) / mp.mpf("0.81")
    e1_oracle = mp.log(1 / (1 - mp.mpf("0.81"))) / mp.mpf("0.81")
    e1, e2 = epsilon_coeffs(0.9)
    ok = abs(e1 - float(e1_oracle)) <= 1e-3 and abs(e2 - float(e2_oracle)) <= 1e-3
    assert _verdict(2, "epsilon coefficients", ok,
                    f"e1={e1:.6f} e2={e2:.6f}")


def test_criterion_3_contraction_rate():
    a_cl = make_double_integrator().gains["A_cl"]
    est = optimal_contraction_rate(a_cl, tol=1e-6)
    p = est.witness
    residual = a_cl.T @ p + p @ a_cl - 2.0 * est.rate * p
    res_ok = np.linalg.eigvalsh(residual)[-1] <= 1e-6 * np.linalg.eigvalsh(p)[-1] + 1e-12
    rate_ok = abs(est.rate - (-2.5)) <= 1e-3
    eig_ok = abs(spectral_abscissa(a_cl) - (-2.5)) <= 1e-9
    ok = res_ok and rate_ok and eig_ok
    assert _verdict(3, "contraction rate bisection", ok, f"c_P={est.rate:.6f}")


def test_criterion_4_double_integrator_end_to_end(di_run):
    sc, result, report = di_run
    delta = float(sc.tube["delta"])
    ok = (result.feasible and report is not None
          and report.safety_fraction >= 1.0 - delta)
    detail = (f"status={result.status} "
              f"safety={report.safety_fraction if report else float('nan'):.6f} "
              f"violations={report.violation_count if report else '?'}")
    assert _verdict(4, "double integrator end-to-end", ok, detail)


def test_criterion_5_unicycle_end_to_end(uni_run):
    sc, result, report = uni_run
    delta = float(sc.tube["delta"])
    ok = (result.feasible and report is not None
          and report.safety_fraction >= 1.0 - delta)
    detail = (f"status={result.status} "
              f"safety={report.safety_fraction if report else float('nan'):.6f} "
              f"violations={report.violation_count if report else '?'}")
    assert _verdict(5, "unicycle end-to-end", ok, detail)


def _cost_gap_dominates(sc, result, report):
    rates = result.metadata["rates"]
    params = result.metadata["tube_params"]
    c = rates.l2_rate  # the certified l2 log-norm rate the gap bounds require
    box_lo, box_hi = report.extras["state_box"]
    traj = result.trajectory
    cost = sc.cost_spec(traj.grid, x_ref_curve=ControlCurve(traj.grid, traj.states))
    L, L_T = lipschitz_constants_from_box(cost, box_lo, box_hi, traj.grid)
    bound = cost_gap_bound_lipschitz(L, L_T, params.n, params.sigma, c,
                                     params.horizon)
    gap = report.mean_cost - report.extras["det_cost_sim_grid"]
    total_ok = gap <= bound + 3.0 * report.cost_se
    env = lipschitz_gap_envelope(L, params.n, params.sigma, c,
                                 report.extras["cost_curve_times"])
    curve_gap = report.extras["cost_curve_mean"] - report.extras["cost_curve_det"]
    curve_ok = bool(np.all(curve_gap <= env + 3.0 * report.extras["cost_curve_se"]))
    return total_ok and curve_ok, gap, bound


def test_criterion_6_cost_gap_dominance(di_run, uni_run):
    oks, details = [], []
    for label, (sc, result, report) in (("di", di_run), ("uni", uni_run)):
        ok, gap, bound = _cost_gap_dominates(sc, result, report)
        oks.append(ok)
        details.append(f"{label}: gap={gap:.4g} bound={bound:.4g}")
    assert _verdict(6, "cost gap dominance", all(oks), "; ".join(details))


def test_criterion_7_mean_square_gap_dominance(di_run):
    # scalar OU
    sigma = math.sqrt(0.1)
    ou = make_scalar_linear(-0.5, sigma)
    curve = mc_mean_square_gap(ou, [0.0], None, horizon=5.0, trials=5000,
                               step=1e-3, seed=11)
    ou_bounds = mean_square_gap_bound(-0.5, sigma, 1, curve.times)
    ou_ok = bool(np.all(curve.mean <= ou_bounds + 3.0 * curve.se))
    # closed-loop double integrator along its planned reference, with the
    # certified l2 log-norm rate of A_cl (the rate the bound's proof uses)
    sc, result, _ = di_run
    traj = result.trajectory
    closed = sc.build_closed_loop()
    controls = ControlCurve(traj.grid, np.hstack([traj.states, traj.controls]))
    c_l2 = matrix_measure_l2(closed.gains["A_cl"])
    di_curve = mc_mean_square_gap(closed.as_system(), traj.states[0], controls,
                                  horizon=traj.horizon, trials=2000,
                                  step=1e-3, seed=12)
    di_bounds = mean_square_gap_bound(c_l2, 0.08, 6, di_curve.times)
    di_ok = bool(np.all(di_curve.mean <= di_bounds + 3.0 * di_curve.se))
    ok = ou_ok and di_ok
    assert _verdict(7, "mean-square gap bound dominance", ok,
                    f"ou_max={curve.mean.max():.4f} di_max={di_curve.mean.max():.4f}")


def test_criterion_8_quadrature_vs_closed_forms():
    ok = True
    for horizon in (0.5, 1.0, 2.0):
        quad0 = lipschitz_gap_integral(1.0, 1, 1.0, 0.0, horizon)
        closed0 = lipschitz_closed_form_zero_rate(1.0, 0.0, 1, 1.0, horizon)
        ok &= abs(quad0 - closed0) <= 1e-6 * closed0
        for c in (0.5, 1.0):
            quad = lipschitz_gap_integral(1.0, 1, 1.0, c, horizon)
            closed = lipschitz_closed_form_positive_rate(1.0, 1, 1.0, c, horizon)
            ok &= abs(quad - closed) <= 1e-6 * closed
    series = cost_gap_bound_smooth(4.0, 2.0, 1, 1.0, 0.0, 2.0)
    for c in (1e-6, -1e-6):
        ok &= abs(cost_gap_bound_smooth(4.0, 2.0, 1, 1.0, c, 2.0) - series) \
            <= 1e-4 * series
    assert _verdict(8, "quadrature vs closed forms", bool(ok))


def test_criterion_9_property_suite():
    ok = True
    # tube monotonicity in t, n, sigma, log(1/delta)
    ts = np.linspace(0.0, 4.0, 17)
    for c in (-0.6, 0.0, 0.8):
        params = TubeParams(c=c, sigma=0.3, n=2, delta=1e-3, eps=0.9,
                            horizon=4.0, dt_param=0.02)
        ok &= bool(np.all(np.diff(tube_radius(params, ts)) >= -1e-15))
    ref = dict(c=-0.5, sigma=0.3, n=2, delta=1e-3, eps=0.9, horizon=4.0,
               dt_param=0.02)
    r_ref = tube_radius(TubeParams(**ref), 2.0)
    for key, value in (("n", 4), ("sigma", 0.5), ("delta", 1e-5)):
        ok &= tube_radius(TubeParams(**{**ref, key: value}), 2.0) > r_ref

    # constraint gradient vs finite differences
    sphere = Obstacle(kind="sphere", projection_dims=(0, 1), center=[0.3, -0.2],
                      radius=0.4)
    base = TubeParams(c=0.0, sigma=1.0, n=1, delta=1e-3, eps=0.9, horizon=1.0)
    from tubeplan.tube import RadiusCurve
    curve = RadiusCurve(np.array([0.0, 1.0]), np.array([0.1, 0.1]), base)
    inflated = inflate_obstacles(ObstacleSet((sphere,)), curve)
    x = np.array([0.8, 0.1])
    _, grads = constraint_values(x, inflated, 0)
    for i in range(2):
        dx = np.zeros(2)
        dx[i] = 1e-6
        fd = (constraint_values(x + dx, inflated, 0)[0]
              - constraint_values(x - dx, inflated, 0)[0]) / 2e-6
        ok &= bool(np.allclose(grads[:, i], fd, rtol=1e-4, atol=1e-8))

    # cover soundness: zero escapes in 1e4 rejection samples per obstacle
    box = Obstacle(kind="axis_box", projection_dims=(0, 1),
                   lo=[0.0, 0.0], hi=[1.0, 1.5])
    try:
        inflate_obstacles(ObstacleSet((box,)), curve, check_cover=True)
    except Exception:
        ok = False

    # bit-identical reports from identical seeds
    model = make_scalar_linear(0.5, 0.3)
    params = TubeParams(c=0.5, sigma=0.3, n=1, delta=1e-2, eps=0.9, horizon=1.0)
    a = mc_tube_containment(model, [0.0], None, params, trials=300, step=1e-2, seed=3)
    b = mc_tube_containment(model, [0.0], None, params, trials=300, step=1e-2, seed=3)
    ok &= a.to_dict() == b.to_dict()
    assert _verdict(9, "property suite", bool(ok))
