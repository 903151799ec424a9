"""Direct collocation transcription and an augmented-Lagrangian NLP solver.

The eroded-set trajectory optimization is transcribed with trapezoidal
collocation: decision vector z = (states at knots, controls at knots),
trapezoidal defect equalities, covering-sphere inequalities at knots and
interval midpoints, and trapezoidal quadrature of the running cost.

The solver wraps an augmented-Lagrangian outer loop (multiplier updates,
x10 penalty growth capped at 1e8) around scipy's L-BFGS-B quasi-Newton
inner minimizer; everything is deterministic given (problem, init, options).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .dynamics import ControlCurve, SystemModel, Trajectory
from .geometry import (InflatedSet, ObstacleSet, constraint_values,
                       erosion_feasible, inflate_obstacles, violated_spheres)
from .tube import tube_curve

__all__ = [
    "CostSpec",
    "Boundary",
    "TranscribedProblem",
    "PlanResult",
    "SolveOptions",
    "InfeasibleErosionError",
    "transcribe",
    "solve",
    "plan",
    "evaluate_cost",
]


class InfeasibleErosionError(RuntimeError):
    """A boundary state lies inside the eroded (inflated) unsafe region."""

    def __init__(self, which: str, obstacle: int, time: float, violation: float):
        super().__init__(
            f"{which} state violates inflated obstacle {obstacle} at t={time:.4g} "
            f"(violation {violation:.4g})")
        self.which = which
        self.obstacle = obstacle
        self.time = time
        self.violation = violation


@dataclass(frozen=True)
class CostSpec:
    """Quadratic running and terminal cost.

    L(x, u, t) = w_init ||x - x_init(t)||^2 + w_u ||u||^2
                 + w_track ||x - x_ref(t)||^2  (+ x'Qx + u'Ru when supplied)
    Phi(x)     = w_terminal ||x - goal||^2    (+ x'Sx when supplied)
    """

    w_init: float = 0.0
    w_u: float = 0.0
    w_track: float = 0.0
    w_terminal: float = 0.0
    x_init_curve: Optional[ControlCurve] = None
    x_ref_curve: Optional[ControlCurve] = None
    goal: Optional[np.ndarray] = None
    q_matrix: Optional[np.ndarray] = None
    r_matrix: Optional[np.ndarray] = None
    s_matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        for w in (self.w_init, self.w_u, self.w_track, self.w_terminal):
            if w < 0:
                raise ValueError("cost weights must be nonnegative")
        for mat in (self.q_matrix, self.r_matrix, self.s_matrix):
            if mat is not None:
                mat = np.asarray(mat, dtype=float)
                if not np.allclose(mat, mat.T) or np.linalg.eigvalsh(mat)[0] <= 0:
                    raise ValueError("Q/R/S must be symmetric positive definite")

    def without_tracking(self) -> "CostSpec":
        return CostSpec(self.w_init, self.w_u, 0.0, self.w_terminal,
                        self.x_init_curve, None, self.goal,
                        self.q_matrix, self.r_matrix, self.s_matrix)

    def running(self, x, u, t):
        """Running cost per row for x (K, n), u (K, p), t (K,)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros(x.shape[0])
        if self.w_init and self.x_init_curve is not None:
            out += self.w_init * np.sum((x - self.x_init_curve.at(t)) ** 2, axis=-1)
        if self.w_u:
            out += self.w_u * np.sum(u * u, axis=-1)
        if self.w_track and self.x_ref_curve is not None:
            out += self.w_track * np.sum((x - self.x_ref_curve.at(t)) ** 2, axis=-1)
        if self.q_matrix is not None:
            out += np.einsum("ki,ij,kj->k", x, self.q_matrix, x)
        if self.r_matrix is not None:
            out += np.einsum("ki,ij,kj->k", u, self.r_matrix, u)
        return out

    def running_grads(self, x, u, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        gx = np.zeros_like(x)
        gu = np.zeros_like(u)
        if self.w_init and self.x_init_curve is not None:
            gx += 2.0 * self.w_init * (x - self.x_init_curve.at(t))
        if self.w_track and self.x_ref_curve is not None:
            gx += 2.0 * self.w_track * (x - self.x_ref_curve.at(t))
        if self.q_matrix is not None:
            gx += 2.0 * x @ self.q_matrix
        if self.w_u:
            gu += 2.0 * self.w_u * u
        if self.r_matrix is not None:
            gu += 2.0 * u @ self.r_matrix
        return gx, gu

    def terminal(self, x):
        x = np.asarray(x, dtype=float)
        out = 0.0
        if self.w_terminal and self.goal is not None:
            out += self.w_terminal * float(np.sum((x - self.goal) ** 2))
        if self.s_matrix is not None:
            out += float(x @ self.s_matrix @ x)
        return out

    def terminal_grad(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        if self.w_terminal and self.goal is not None:
            g += 2.0 * self.w_terminal * (x - self.goal)
        if self.s_matrix is not None:
            g += 2.0 * self.s_matrix @ x
        return g


def evaluate_cost(trajectory: Trajectory, cost: CostSpec) -> float:
    """Trapezoidal quadrature of the running cost plus the terminal cost."""
    running = cost.running(trajectory.states, trajectory.controls, trajectory.grid)
    quad = float(np.trapezoid(running, trajectory.grid)) if trajectory.grid.size > 1 else 0.0
    return quad + cost.terminal(trajectory.states[-1])


@dataclass(frozen=True)
class Boundary:
    start: np.ndarray
    goal: np.ndarray
    pinned_start: tuple[int, ...]
    pinned_goal: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "start", np.atleast_1d(np.asarray(self.start, float)))
        object.__setattr__(self, "goal", np.atleast_1d(np.asarray(self.goal, float)))
        object.__setattr__(self, "pinned_start", tuple(int(i) for i in self.pinned_start))
        object.__setattr__(self, "pinned_goal", tuple(int(i) for i in self.pinned_goal))


@dataclass
class TranscribedProblem:
    model: SystemModel
    times: np.ndarray  # knot times (N+1,)
    inflated: InflatedSet  # grid = knots interleaved with midpoints
    cost: CostSpec
    boundary: Boundary
    control_bounds: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.n = self.model.state_dim
        self.p = self.model.control_dim
        self.num_knots = self.times.size
        mids = 0.5 * (self.times[:-1] + self.times[1:])
        combined = np.empty(2 * self.times.size - 1)
        combined[0::2] = self.times
        combined[1::2] = mids
        if (self.inflated.grid.size != combined.size
                or not np.allclose(self.inflated.grid, combined, atol=1e-9)):
            raise ValueError("inflated set grid must be knots interleaved with midpoints")
        self.combined = combined
        self.quad_weights = np.zeros(self.num_knots)
        deltas = np.diff(self.times)
        self.quad_weights[:-1] += 0.5 * deltas
        self.quad_weights[1:] += 0.5 * deltas

    # -- decision vector layout ------------------------------------------------
    @property
    def num_vars(self) -> int:
        return self.num_knots * (self.n + self.p)

    def pack(self, states, controls):
        return np.concatenate([np.asarray(states, float).ravel(),
                               np.asarray(controls, float).ravel()])

    def unpack(self, z):
        k, n, p = self.num_knots, self.n, self.p
        states = z[:k * n].reshape(k, n)
        controls = z[k * n:].reshape(k, p)
        return states, controls

    def _drift_all(self, states, controls):
        return np.vstack([self.model.drift(states[k], controls[k], self.times[k])
                          for k in range(self.num_knots)])

    # -- objective ---------------------------------------------------------------
    def objective(self, z) -> float:
        states, controls = self.unpack(z)
        running = self.cost.running(states, controls, self.times)
        return float(self.quad_weights @ running) + self.cost.terminal(states[-1])

    def objective_grad(self, z) -> np.ndarray:
        states, controls = self.unpack(z)
        gx, gu = self.cost.running_grads(states, controls, self.times)
        gx = gx * self.quad_weights[:, None]
        gu = gu * self.quad_weights[:, None]
        gx[-1] += self.cost.terminal_grad(states[-1])
        return self.pack(gx, gu)

    # -- equality constraints: trapezoidal defects + boundary pins ---------------
    def eq_constraints(self, z):
        states, controls = self.unpack(z)
        k, n, p = self.num_knots, self.n, self.p
        drift = self._drift_all(states, controls)
        deltas = np.diff(self.times)
        defects = (states[1:] - states[:-1]
                   - 0.5 * deltas[:, None] * (drift[:-1] + drift[1:]))
        rows = (k - 1) * n + len(self.boundary.pinned_start) + len(self.boundary.pinned_goal)
        h = np.empty(rows)
        jac = np.zeros((rows, self.num_vars))
        h[:(k - 1) * n] = defects.ravel()
        u_off = k * n
        for i in range(k - 1):
            a_i = self.model.state_jacobian(states[i], controls[i], self.times[i])
            a_j = self.model.state_jacobian(states[i + 1], controls[i + 1], self.times[i + 1])
            b_i = self.model.input_jacobian(states[i], controls[i], self.times[i])
            b_j = self.model.input_jacobian(states[i + 1], controls[i + 1], self.times[i + 1])
            half = 0.5 * deltas[i]
            r0 = i * n
            jac[r0:r0 + n, i * n:(i + 1) * n] = -np.eye(n) - half * a_i
            jac[r0:r0 + n, (i + 1) * n:(i + 2) * n] = np.eye(n) - half * a_j
            jac[r0:r0 + n, u_off + i * p:u_off + (i + 1) * p] = -half * b_i
            jac[r0:r0 + n, u_off + (i + 1) * p:u_off + (i + 2) * p] = -half * b_j
        row = (k - 1) * n
        for i in self.boundary.pinned_start:
            h[row] = states[0, i] - self.boundary.start[i]
            jac[row, i] = 1.0
            row += 1
        for i in self.boundary.pinned_goal:
            h[row] = states[-1, i] - self.boundary.goal[i]
            jac[row, (k - 1) * n + i] = 1.0
            row += 1
        return h, jac

    # -- inequality constraints: spheres at knots/midpoints + control box --------
    def ineq_constraints(self, z):
        states, controls = self.unpack(z)
        k, n, p = self.num_knots, self.n, self.p
        u_off = k * n
        values = []
        jac_rows = []

        def add_point(x, cidx, knot_lo, knot_hi, w_lo, w_hi):
            g, gx = constraint_values(x, self.inflated, cidx)
            if g.size == 0:
                return
            values.append(g)
            block = np.zeros((g.size, self.num_vars))
            block[:, knot_lo * n:(knot_lo + 1) * n] = w_lo * gx
            if knot_hi is not None:
                block[:, knot_hi * n:(knot_hi + 1) * n] = w_hi * gx
            jac_rows.append(block)

        for i in range(k):
            add_point(states[i], 2 * i, i, None, 1.0, 0.0)
        for i in range(k - 1):
            mid = 0.5 * (states[i] + states[i + 1])
            add_point(mid, 2 * i + 1, i, i + 1, 0.5, 0.5)
        if self.control_bounds is not None:
            lo, hi = self.control_bounds
            for i in range(k):
                for j in range(p):
                    col = u_off + i * p + j
                    if np.isfinite(hi[j]):
                        values.append(np.array([controls[i, j] - hi[j]]))
                        block = np.zeros((1, self.num_vars))
                        block[0, col] = 1.0
                        jac_rows.append(block)
                    if np.isfinite(lo[j]):
                        values.append(np.array([lo[j] - controls[i, j]]))
                        block = np.zeros((1, self.num_vars))
                        block[0, col] = -1.0
                        jac_rows.append(block)
        if not values:
            return np.zeros(0), np.zeros((0, self.num_vars))
        return np.concatenate(values), np.vstack(jac_rows)

    def max_violation(self, z) -> float:
        h, _ = self.eq_constraints(z)
        g, _ = self.ineq_constraints(z)
        viol = float(np.max(np.abs(h))) if h.size else 0.0
        if g.size:
            viol = max(viol, float(np.max(np.maximum(g, 0.0))))
        return viol


@dataclass(frozen=True)
class SolveOptions:
    feas_tol: float = 1e-6
    opt_tol: float = 1e-4
    max_outer: int = 30
    max_inner: int = 800
    rho_init: float = 10.0
    rho_max: float = 1e8


@dataclass
class PlanResult:
    trajectory: Optional[Trajectory]
    j_d: float
    status: str  # optimal | feasible_suboptimal | infeasible | max_iter
    outer_iterations: int = 0
    inner_iterations: int = 0
    violation: float = math.inf
    kkt_residual: float = math.inf
    message: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "feasible_suboptimal")


def transcribe(model: SystemModel, cost: CostSpec, inflated: InflatedSet,
               boundary: Boundary, times) -> TranscribedProblem:
    """Assemble the collocation NLP; preflight boundary states against erosion."""
    times = np.asarray(times, dtype=float)
    if times.size < 3:
        raise ValueError("need at least 2 intervals (3 knots)")
    for which, state, cidx in (("start", boundary.start, 0),
                               ("goal", boundary.goal, inflated.grid.size - 1)):
        hits = violated_spheres(state, inflated, cidx)
        if hits:
            source, violation = max(hits, key=lambda h: h[1])
            raise InfeasibleErosionError(which, source, float(inflated.grid[cidx]), violation)
    return TranscribedProblem(model=model, times=times, inflated=inflated,
                              cost=cost, boundary=boundary,
                              control_bounds=model.control_bounds)


def solve(problem: TranscribedProblem, init: np.ndarray,
          options: SolveOptions = SolveOptions()) -> PlanResult:
    """Augmented-Lagrangian outer loop around an L-BFGS-B inner solve."""
    z = np.asarray(init, dtype=float).copy()
    if z.size != problem.num_vars:
        raise ValueError("initial guess has wrong dimension")
    h, _ = problem.eq_constraints(z)
    g, _ = problem.ineq_constraints(z)
    lam = np.zeros(h.size)
    mu = np.zeros(g.size)
    rho = options.rho_init
    inner_total = 0
    prev_viol = math.inf
    status = "infeasible"
    kkt = math.inf
    viol = problem.max_violation(z)

    def aug_lagrangian(zz):
        f = problem.objective(zz)
        gf = problem.objective_grad(zz)
        hh, jh = problem.eq_constraints(zz)
        gg, jg = problem.ineq_constraints(zz)
        val = f
        grad = gf
        if hh.size:
            val += float(lam @ hh) + 0.5 * rho * float(hh @ hh)
            grad = grad + jh.T @ (lam + rho * hh)
        if gg.size:
            shifted = np.maximum(0.0, mu + rho * gg)
            val += float(np.sum(shifted ** 2 - mu ** 2)) / (2.0 * rho)
            grad = grad + jg.T @ shifted
        return val, grad

    for outer in range(1, options.max_outer + 1):
        res = optimize.minimize(
            aug_lagrangian, z, jac=True, method="L-BFGS-B",
            options={"maxiter": options.max_inner, "ftol": 1e-14,
                     "gtol": max(0.1 * options.opt_tol, 1e-10)})
        z = res.x
        inner_total += int(res.nit)
        h, jh = problem.eq_constraints(z)
        g, jg = problem.ineq_constraints(z)
        lam = lam + rho * h
        mu = np.maximum(0.0, mu + rho * g)
        viol = max(float(np.max(np.abs(h))) if h.size else 0.0,
                   float(np.max(np.maximum(g, 0.0))) if g.size else 0.0)
        grad_l = problem.objective_grad(z)
        if h.size:
            grad_l = grad_l + jh.T @ lam
        if g.size:
            grad_l = grad_l + jg.T @ mu
        kkt = float(np.max(np.abs(grad_l)))
        if viol <= options.feas_tol and kkt <= options.opt_tol:
            status = "optimal"
            break
        if viol > 0.25 * prev_viol:
            rho = min(rho * 10.0, options.rho_max)
        prev_viol = viol
    else:
        outer = options.max_outer
        if viol <= options.feas_tol:
            status = "feasible_suboptimal"
    if status == "infeasible" and viol <= options.feas_tol:
        status = "feasible_suboptimal"

    states, controls = problem.unpack(z)
    traj = Trajectory(problem.times, states, controls)
    j_d = evaluate_cost(traj, problem.cost)
    return PlanResult(trajectory=traj, j_d=j_d, status=status,
                      outer_iterations=outer, inner_iterations=inner_total,
                      violation=viol, kkt_residual=kkt)


def straight_line_guess(boundary: Boundary, times, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Initial guess: linear interpolation of boundary states, zero feedforward."""
    times = np.asarray(times, dtype=float)
    alpha = (times - times[0]) / (times[-1] - times[0])
    states = (1.0 - alpha)[:, None] * boundary.start + alpha[:, None] * boundary.goal
    return states, np.zeros((times.size, p))


def plan(scenario) -> PlanResult:
    """Full pipeline: tube curve -> obstacle inflation -> transcription -> solve.

    `scenario` provides models, tube parameters, obstacles, boundary, cost
    weights and solver options (see tubeplan.scenario.Scenario).
    """
    nominal = scenario.build_nominal()
    rates = scenario.resolve_rates()
    params = scenario.tube_params(rates.tube_rate)
    n_knots = scenario.solver.knots + 1
    times = np.linspace(0.0, params.horizon, n_knots)
    combined = np.empty(2 * n_knots - 1)
    combined[0::2] = times
    combined[1::2] = 0.5 * (times[:-1] + times[1:])
    curve = tube_curve(params, combined)
    obstacles = scenario.obstacle_set()
    inflated = inflate_obstacles(obstacles, curve,
                                 cover_tol=scenario.solver.cover_tol,
                                 budget=scenario.solver.sphere_budget)
    boundary = scenario.boundary_spec()
    cost = scenario.cost_spec(times).without_tracking()
    metadata = {
        "tube_params": params,
        "radius_curve": curve,
        "rates": rates,
        "knot_times": times,
    }
    try:
        problem = transcribe(nominal, cost, inflated, boundary, times)
    except InfeasibleErosionError as err:
        return PlanResult(trajectory=None, j_d=math.nan, status="infeasible",
                          message=str(err), metadata=metadata)
    states0, controls0 = straight_line_guess(boundary, times, nominal.control_dim)
    options = scenario.solve_options()
    best = None
    rng = np.random.default_rng(scenario.solver.multistart_seed)
    for attempt in range(max(1, scenario.solver.multistart)):
        s0 = states0.copy()
        if attempt > 0:
            s0 = s0 + 0.1 * rng.standard_normal(s0.shape)
            s0[0] = states0[0]
            s0[-1] = states0[-1]
        result = solve(problem, problem.pack(s0, controls0), options)
        if best is None:
            best = result
        elif result.feasible and (not best.feasible or result.j_d < best.j_d - 1e-12):
            best = result
    best.metadata.update(metadata)
    return best
