import numpy as np
import pytest

from tubeplan.dynamics import ControlCurve, SystemModel, Trajectory, \
    integrate_deterministic
from tubeplan.geometry import Obstacle, ObstacleSet, inflate_obstacles
from tubeplan.optimizer import (Boundary, CostSpec, SolveOptions, evaluate_cost,
                                solve, straight_line_guess, transcribe)
from tubeplan.tube import RadiusCurve, TubeParams


def _combined(times):
    times = np.asarray(times, dtype=float)
    combined = np.empty(2 * times.size - 1)
    combined[0::2] = times
    combined[1::2] = 0.5 * (times[:-1] + times[1:])
    return combined


def _inflated(obstacles, times, r=0.0):
    grid = _combined(times)
    params = TubeParams(c=0.0, sigma=1.0, n=1, delta=1e-3, eps=0.9,
                        horizon=float(grid[-1]) or 1.0)
    curve = RadiusCurve(grid, np.full(grid.size, float(r)), params)
    return inflate_obstacles(ObstacleSet(obstacles), curve)


def _integrator_1d():
    def drift(x, u, t):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.stack([x[..., 1], u[..., 0]], axis=-1)

    return SystemModel(
        state_dim=2, control_dim=1, noise_dim=1,
        drift=drift,
        diffusion=lambda x, t: np.array([[0.0], [0.0]]),
        drift_jacobian=lambda x, u, t: np.array([[0.0, 1.0], [0.0, 0.0]]),
        control_jacobian=lambda x, u, t: np.array([[0.0], [1.0]]))


def test_minimum_effort_cubic():
    # rest-to-rest 0 -> 1 in T = 1 with J = int u^2: u*(t) = 6 - 12 t, J* = 12
    model = _integrator_1d()
    times = np.linspace(0.0, 1.0, 101)
    boundary = Boundary([0.0, 0.0], [1.0, 0.0], (0, 1), (0, 1))
    cost = CostSpec(w_u=1.0)
    problem = transcribe(model, cost, _inflated((), times), boundary, times)
    states0, controls0 = straight_line_guess(boundary, times, 1)
    result = solve(problem, problem.pack(states0, controls0))
    assert result.feasible
    assert result.j_d == pytest.approx(12.0, rel=1e-3)
    # endpoint knots carry half quadrature weight, so compare interior knots
    u_star = 6.0 - 12.0 * times
    assert np.allclose(result.trajectory.controls[1:-1, 0], u_star[1:-1], atol=0.05)


def test_solve_convex_instance_init_independence():
    model = _integrator_1d()
    times = np.linspace(0.0, 1.0, 21)
    boundary = Boundary([0.0, 0.0], [1.0, 0.0], (0, 1), (0, 1))
    cost = CostSpec(w_u=1.0)
    problem = transcribe(model, cost, _inflated((), times), boundary, times)
    opts = SolveOptions(opt_tol=1e-5)
    s0, c0 = straight_line_guess(boundary, times, 1)
    a = solve(problem, problem.pack(s0, c0), opts)
    rng = np.random.default_rng(4)
    z1 = problem.pack(s0 + 0.3 * rng.standard_normal(s0.shape),
                      c0 + rng.standard_normal(c0.shape))
    b = solve(problem, z1, opts)
    assert a.feasible and b.feasible
    assert a.j_d == pytest.approx(b.j_d, abs=1e-3)


def test_solve_determinism():
    model = _integrator_1d()
    times = np.linspace(0.0, 1.0, 16)
    boundary = Boundary([0.0, 0.0], [1.0, 0.0], (0, 1), (0, 1))
    problem = transcribe(model, CostSpec(w_u=1.0), _inflated((), times),
                         boundary, times)
    s0, c0 = straight_line_guess(boundary, times, 1)
    a = solve(problem, problem.pack(s0, c0))
    b = solve(problem, problem.pack(s0, c0))
    assert np.array_equal(a.trajectory.states, b.trajectory.states)
    assert a.j_d == b.j_d


def test_transcribe_preflight_infeasible():
    from tubeplan.optimizer import InfeasibleErosionError
    model = _integrator_1d()
    times = np.linspace(0.0, 1.0, 11)
    blocking = Obstacle(kind="sphere", projection_dims=(0,), center=[1.0],
                        radius=0.2)
    boundary = Boundary([0.0, 0.0], [1.0, 0.0], (0, 1), (0, 1))
    with pytest.raises(InfeasibleErosionError) as err:
        transcribe(model, CostSpec(w_u=1.0), _inflated((blocking,), times),
                   boundary, times)
    assert err.value.which == "goal"


def test_objective_and_constraint_gradients():
    model = _integrator_1d()
    times = np.linspace(0.0, 1.0, 8)
    obstacle = Obstacle(kind="sphere", projection_dims=(0,), center=[0.5],
                        radius=0.1)
    bounded = SystemModel(
        state_dim=2, control_dim=1, noise_dim=1, drift=model.drift,
        diffusion=model.diffusion, drift_jacobian=model.drift_jacobian,
        control_jacobian=model.control_jacobian,
        control_bounds=(np.array([-8.0]), np.array([8.0])))
    boundary = Boundary([0.0, 0.0], [1.0, 0.0], (0, 1), (0, 1))
    cost = CostSpec(w_init=0.7, w_u=1.0, w_terminal=0.3,
                    x_init_curve=ControlCurve([0.0, 1.0], [[0.0, 0.0], [1.0, 0.0]]),
                    goal=np.array([1.0, 0.0]))
    problem = transcribe(bounded, cost, _inflated((obstacle,), times, r=0.05),
                         boundary, times)
    rng = np.random.default_rng(12)
    z = rng.standard_normal(problem.num_vars)
    eps = 1e-6

    grad = problem.objective_grad(z)
    h_eq, jac_eq = problem.eq_constraints(z)
    g_in, jac_in = problem.ineq_constraints(z)
    for i in rng.choice(problem.num_vars, size=10, replace=False):
        dz = np.zeros(problem.num_vars)
        dz[i] = eps
        fd_obj = (problem.objective(z + dz) - problem.objective(z - dz)) / (2 * eps)
        assert grad[i] == pytest.approx(fd_obj, rel=1e-4, abs=1e-6)
        fd_eq = (problem.eq_constraints(z + dz)[0]
                 - problem.eq_constraints(z - dz)[0]) / (2 * eps)
        assert np.allclose(jac_eq[:, i], fd_eq, rtol=1e-4, atol=1e-6)
        fd_in = (problem.ineq_constraints(z + dz)[0]
                 - problem.ineq_constraints(z - dz)[0]) / (2 * eps)
        assert np.allclose(jac_in[:, i], fd_in, rtol=1e-4, atol=1e-6)


def test_defect_convergence_order():
    # defects of the true ODE solution shrink at least O(dt^2) under refinement
    # (trapezoid local truncation is in fact O(dt^3))
    from tubeplan.dynamics import make_scalar_linear
    model = make_scalar_linear(-0.5, 0.0)
    boundary = Boundary([1.0], [np.exp(-0.5)], (0,), ())

    def max_defect(n_knots):
        times = np.linspace(0.0, 1.0, n_knots)
        problem = transcribe(model, CostSpec(w_u=1.0), _inflated((), times),
                             boundary, times)
        traj = integrate_deterministic(model, [1.0], None, times)
        z = problem.pack(traj.states, np.zeros((times.size, 1)))
        h, _ = problem.eq_constraints(z)
        return float(np.max(np.abs(h[:times.size - 1])))

    coarse = max_defect(11)
    fine = max_defect(21)
    assert fine <= coarse / 4.0 * 1.1


def test_evaluate_cost_basics():
    grid = np.linspace(0.0, 2.0, 9)
    zero = Trajectory(grid, np.zeros((9, 2)), np.zeros((9, 1)))
    assert evaluate_cost(zero, CostSpec(w_u=1.0)) == 0.0
    const = Trajectory(grid, np.zeros((9, 2)), np.ones((9, 1)))
    assert evaluate_cost(const, CostSpec(w_u=1.0)) == pytest.approx(2.0)


def test_evaluate_cost_quadratic_oracle():
    # running cost ||x - 0||^2 on x(t) = t over [0, 1]: integral = 1/3
    grid = np.linspace(0.0, 1.0, 201)
    traj = Trajectory(grid, grid[:, None], np.zeros((grid.size, 1)))
    cost = CostSpec(w_init=1.0,
                    x_init_curve=ControlCurve([0.0, 1.0], [[0.0], [0.0]]))
    assert evaluate_cost(traj, cost) == pytest.approx(1.0 / 3.0, rel=1e-4)


def test_plan_infeasible_status(scenario_dir):
    import yaml
    from tubeplan.optimizer import plan
    from tubeplan.scenario import parse_scenario

    raw = yaml.safe_load((scenario_dir / "double_integrator.yaml").read_text())
    raw["obstacles"] = [{"kind": "sphere", "projection_dims": [0, 1, 2],
                         "center": [2.0, 2.0, 2.0], "radius": 0.3}]
    result = plan(parse_scenario(raw))
    assert result.status == "infeasible"
    assert "goal" in result.message
