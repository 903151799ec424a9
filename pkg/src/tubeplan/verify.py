"""Monte Carlo validation and closed-form cost-gap bounds.

Ensembles of Euler-Maruyama trials are compared against their associated
deterministic trajectory: tube containment (sup-norm check on the simulation
grid), obstacle safety against the original uninflated obstacles, empirical
cost gaps, and the analytic mean-square / cost-gap bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .dynamics import (ClosedLoopSpec, ControlCurve, SystemModel, Trajectory,
                       _control_at, ensemble_euler_maruyama,
                       euler_maruyama_steps)
from .geometry import ObstacleSet
from .optimizer import CostSpec
from .tube import C_ZERO_TOL, TubeParams, tube_radius

__all__ = [
    "McReport",
    "GapCurve",
    "mc_tube_containment",
    "mc_chance_constraint",
    "mc_mean_square_gap",
    "cost_gap_bound_lipschitz",
    "cost_gap_bound_smooth",
    "lipschitz_gap_integral",
    "lipschitz_gap_envelope",
    "lipschitz_closed_form_zero_rate",
    "lipschitz_closed_form_positive_rate",
]


@dataclass
class McReport:
    trials: int
    violation_count: int
    seed: int
    step: float
    containment_fraction: Optional[float] = None
    safety_fraction: Optional[float] = None
    mean_cost: Optional[float] = None
    cost_se: Optional[float] = None
    diverged_count: int = 0
    notes: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "trials": self.trials,
            "violation_count": self.violation_count,
            "seed": self.seed,
            "step": self.step,
            "diverged_count": self.diverged_count,
            "notes": self.notes,
        }
        for key in ("containment_fraction", "safety_fraction", "mean_cost", "cost_se"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


def _fsum(parts) -> float:
    return math.fsum(float(p) for p in parts)


def _euler_path(model: SystemModel, x0, controls, times) -> np.ndarray:
    """Explicit Euler on the simulation grid: the zero-noise twin of the
    Euler-Maruyama ensemble, so sigma = 0 gives exact coincidence."""
    times = np.asarray(times, dtype=float)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    states = np.empty((times.size, x.size))
    states[0] = x
    for k in range(times.size - 1):
        u = _control_at(controls, times[k], model.control_dim)
        x = x + (times[k + 1] - times[k]) * model.drift(x, u, times[k])
        states[k + 1] = x
    return states


def mc_tube_containment(model: SystemModel, x0, controls, params: TubeParams,
                        trials: int, step: float, seed: int,
                        chunk: int = 1000) -> McReport:
    """Fraction of trials with sup_t ||X_t - x_t|| <= r(t) on the simulation grid."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    times = euler_maruyama_steps(params.horizon, step)
    det = _euler_path(model, x0, controls, times)
    radii = np.atleast_1d(tube_radius(params, times))
    contained = np.ones(trials, dtype=bool)
    diverged = np.zeros(trials, dtype=bool)

    def on_step(k, t, x, sl):
        err = np.linalg.norm(x - det[k], axis=-1)
        # NaN compares false, so divergence counts as a violation
        contained[sl] &= err <= radii[k]
        diverged[sl] |= ~np.all(np.isfinite(x), axis=-1)

    ensemble_euler_maruyama(model, x0, controls, times, seed, trials, on_step, chunk=chunk)
    violations = int(np.count_nonzero(~contained))
    report = McReport(
        trials=trials, violation_count=violations, seed=seed, step=step,
        containment_fraction=1.0 - violations / trials,
        diverged_count=int(np.count_nonzero(diverged)),
        notes={
            "c": params.c, "sigma": params.sigma, "n": params.n,
            "delta": params.delta, "eps": params.eps, "horizon": params.horizon,
            "dt_param": params.dt_param, "dt_defaulted": params.dt_defaulted,
        },
    )
    return report


def mc_chance_constraint(plan_trajectory: Trajectory, closed_loop: ClosedLoopSpec,
                         obstacles: ObstacleSet, cost: CostSpec, trials: int,
                         step: float, seed: int, chunk: int = 1000,
                         sample_paths: int = 0) -> McReport:
    """Apply the planned reference/feedforward to the stochastic closed loop.

    A trial violates if the state touches any ORIGINAL (uninflated) obstacle
    at any simulation step. Also reports the mean stochastic cost (running
    cost evaluated with the shared feedforward controls) and the cumulative
    cost curve at the plan knots.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    system = closed_loop.as_system()
    knots = plan_trajectory.grid
    curve = ControlCurve(knots, np.hstack([plan_trajectory.states,
                                           plan_trajectory.controls]))
    times = euler_maruyama_steps(knots[-1], step)
    u_ff = ControlCurve(knots, plan_trajectory.controls).at(times)
    x0 = plan_trajectory.states[0]

    det = _euler_path(system, x0, curve, times)
    det_running = cost.running(det, u_ff, times)
    det_cum = integrate.cumulative_trapezoid(det_running, times, initial=0.0)
    det_total = float(det_cum[-1] + cost.terminal(det[-1]))

    knot_idx = np.searchsorted(times, knots - 1e-12)
    knot_idx = np.clip(knot_idx, 0, times.size - 1)
    is_knot = np.zeros(times.size, dtype=bool)
    is_knot[knot_idx] = True
    knot_pos = {int(k): i for i, k in enumerate(knot_idx)}

    safe = np.ones(trials, dtype=bool)
    diverged = np.zeros(trials, dtype=bool)
    cost_curve_sum = np.zeros(knots.size)
    cost_curve_sumsq = np.zeros(knots.size)
    total_cost_parts = []
    total_cost_sq_parts = []
    box_lo = np.full(system.state_dim, np.inf)
    box_hi = np.full(system.state_dim, -np.inf)
    n_paths = min(sample_paths, trials)
    paths = np.empty((n_paths, knots.size, system.state_dim)) if n_paths else None

    state = {"accum": None, "prev": None}

    def on_step(k, t, x, sl):
        if k == 0:
            state["accum"] = np.zeros(x.shape[0])
            state["prev"] = cost.running(x, u_ff[0], times[0:1])
        else:
            h = times[k] - times[k - 1]
            running = cost.running(x, u_ff[k], times[k:k + 1])
            state["accum"] += 0.5 * h * (state["prev"] + running)
            state["prev"] = running
        safe[sl] &= ~obstacles.unsafe_mask(x)
        finite = np.all(np.isfinite(x), axis=-1)
        diverged[sl] |= ~finite
        if np.any(finite):
            np.minimum(box_lo, x[finite].min(axis=0), out=box_lo)
            np.maximum(box_hi, x[finite].max(axis=0), out=box_hi)
        if is_knot[k]:
            i = knot_pos[k]
            cost_curve_sum[i] += float(np.sum(state["accum"], dtype=np.float64))
            cost_curve_sumsq[i] += float(np.sum(state["accum"] ** 2, dtype=np.float64))
            if paths is not None and sl.start < n_paths:
                hi = min(n_paths, sl.stop)
                paths[sl.start:hi, i] = x[: hi - sl.start]
        if k == times.size - 1:
            total = state["accum"] + np.array([cost.terminal(row) for row in x])
            total_cost_parts.append(float(np.sum(total, dtype=np.float64)))
            total_cost_sq_parts.append(float(np.sum(total ** 2, dtype=np.float64)))

    ensemble_euler_maruyama(system, x0, curve, times, seed, trials, on_step, chunk=chunk)
    safe &= ~diverged
    violations = int(np.count_nonzero(~safe))
    mean_cost = _fsum(total_cost_parts) / trials
    var = max(0.0, _fsum(total_cost_sq_parts) / trials - mean_cost ** 2)
    cost_se = math.sqrt(var / trials) if trials > 1 else float("nan")
    curve_mean = cost_curve_sum / trials
    curve_se = np.sqrt(np.maximum(0.0, cost_curve_sumsq / trials - curve_mean ** 2)
                       / max(trials, 2))
    report = McReport(
        trials=trials, violation_count=violations, seed=seed, step=step,
        safety_fraction=1.0 - violations / trials,
        mean_cost=mean_cost, cost_se=cost_se,
        diverged_count=int(np.count_nonzero(diverged)),
        extras={
            "cost_curve_times": knots.copy(),
            "cost_curve_mean": curve_mean,
            "cost_curve_se": curve_se,
            "cost_curve_det": det_cum[knot_idx],
            "det_cost_sim_grid": det_total,
            "state_box": (box_lo, box_hi),
            "sample_paths": paths,
        },
    )
    return report


@dataclass(frozen=True)
class GapCurve:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray


def mc_mean_square_gap(model: SystemModel, x0, controls, horizon: float,
                       trials: int, step: float, seed: int,
                       record_count: int = 50, chunk: int = 1000) -> GapCurve:
    """Pointwise estimates of E||X_t - x_t||^2 with standard errors."""
    if trials < 2:
        raise ValueError("trials must be >= 2")
    times = euler_maruyama_steps(horizon, step)
    det = _euler_path(model, x0, controls, times)
    stride = max(1, (times.size - 1) // record_count)
    rec = np.arange(0, times.size, stride)
    if rec[-1] != times.size - 1:
        rec = np.append(rec, times.size - 1)
    rec_pos = {int(k): i for i, k in enumerate(rec)}
    sums = np.zeros(rec.size)
    sumsq = np.zeros(rec.size)

    def on_step(k, t, x, sl):
        if k in rec_pos:
            v = np.sum((x - det[k]) ** 2, axis=-1)
            i = rec_pos[k]
            sums[i] += float(np.sum(v, dtype=np.float64))
            sumsq[i] += float(np.sum(v * v, dtype=np.float64))

    ensemble_euler_maruyama(model, x0, controls, times, seed, trials, on_step, chunk=chunk)
    mean = sums / trials
    var = np.maximum(0.0, sumsq / trials - mean ** 2)
    se = np.sqrt(var / trials)
    return GapCurve(times=times[rec], mean=mean, se=se)


def _gap_integrand(L: float, n: int, sigma: float, c: float):
    nsig = n * sigma ** 2

    def integrand(t):
        if abs(c) < C_ZERO_TOL:
            growth = t
        else:
            growth = np.expm1(2.0 * c * t) / (2.0 * c)
        return np.sqrt(L ** 2 * nsig * growth)

    return integrand


def lipschitz_gap_integral(L: float, n: int, sigma: float, c: float, horizon: float) -> float:
    """Adaptive quadrature of int_0^T sqrt(L^2 n sigma^2 (e^{2ct}-1)/(2c)) dt."""
    if sigma == 0.0 or L == 0.0:
        return 0.0
    value, _ = integrate.quad(_gap_integrand(L, n, sigma, c), 0.0, horizon, limit=200)
    return float(value)


def lipschitz_gap_envelope(L: float, n: int, sigma: float, c: float, times) -> np.ndarray:
    """Cumulative running-cost gap bound at each time (no terminal term)."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    fine = np.linspace(0.0, times[-1], max(2001, 4 * times.size))
    vals = _gap_integrand(L, n, sigma, c)(fine)
    cum = integrate.cumulative_trapezoid(vals, fine, initial=0.0)
    return np.interp(times, fine, cum)


def cost_gap_bound_lipschitz(L: float, L_T: float, n: int, sigma: float,
                             c: float, horizon: float) -> float:
    """Cost-gap bound for L-Lipschitz running and L_T-Lipschitz terminal cost."""
    if L < 0 or L_T < 0:
        raise ValueError("Lipschitz constants must be nonnegative")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if abs(c) < C_ZERO_TOL:
        growth_t = horizon
    else:
        growth_t = math.expm1(2.0 * c * horizon) / (2.0 * c)
    terminal = math.sqrt(L_T ** 2 * n * sigma ** 2 * growth_t)
    return lipschitz_gap_integral(L, n, sigma, c, horizon) + terminal


def lipschitz_closed_form_zero_rate(L: float, L_T: float, n: int, sigma: float,
                                    horizon: float) -> float:
    """Closed form of the Lipschitz bound at c = 0."""
    return (2.0 / 3.0) * L * sigma * math.sqrt(n) * horizon ** 1.5 \
        + L_T * sigma * math.sqrt(n * horizon)


def lipschitz_closed_form_positive_rate(L: float, n: int, sigma: float, c: float,
                                        horizon: float) -> float:
    """Antiderivative of the integral part for c > 0:
    sqrt(L^2 n sigma^2 / (2 c^3)) (w - arctan(w)), w = sqrt(e^{2cT} - 1)."""
    if c <= 0:
        raise ValueError("closed form requires c > 0")
    w = math.sqrt(math.expm1(2.0 * c * horizon))
    return math.sqrt(L ** 2 * n * sigma ** 2 / (2.0 * c ** 3)) * (w - math.atan(w))


def cost_gap_bound_smooth(L: float, L_T: float, n: int, sigma: float,
                          c: float, horizon: float) -> float:
    """Cost-gap bound for L-smooth costs on linear systems.

    L n sigma^2 ((e^{2cT}-1)/(2c) - T)/(4c) + L_T n sigma^2 (e^{2cT}-1)/(4c),
    with the series limit L n sigma^2 T^2/4 + L_T n sigma^2 T/2 at c -> 0.
    """
    if L < 0 or L_T < 0:
        raise ValueError("smoothness constants must be nonnegative")
    nsig = n * sigma ** 2
    if abs(c) < C_ZERO_TOL:
        return 0.25 * L * nsig * horizon ** 2 + 0.5 * L_T * nsig * horizon
    growth = math.expm1(2.0 * c * horizon) / (2.0 * c)
    return L * nsig * (growth - horizon) / (4.0 * c) + L_T * nsig * growth / 2.0


def lipschitz_constants_from_box(cost: CostSpec, box_lo, box_hi, times) -> tuple[float, float]:
    """Conservative sup of running/terminal cost gradient norms over a state box.

    Uses the distance from the box corners to the reference curves of the
    quadratic cost.
    """
    box_lo = np.asarray(box_lo, dtype=float)
    box_hi = np.asarray(box_hi, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    corners_far = np.maximum(np.abs(box_lo), np.abs(box_hi))

    def max_dist(curve):
        ref = curve.at(times)  # (K, n)
        # farthest box point from each reference sample, componentwise
        d_lo = np.abs(ref - box_lo)
        d_hi = np.abs(box_hi - ref)
        far = np.maximum(d_lo, d_hi)
        return float(np.max(np.linalg.norm(far, axis=-1)))

    L = 0.0
    if cost.w_init and cost.x_init_curve is not None:
        L += 2.0 * cost.w_init * max_dist(cost.x_init_curve)
    if cost.w_track and cost.x_ref_curve is not None:
        L += 2.0 * cost.w_track * max_dist(cost.x_ref_curve)
    if cost.q_matrix is not None:
        L += 2.0 * float(np.linalg.eigvalsh(cost.q_matrix)[-1]) \
            * float(np.linalg.norm(corners_far))
    L_T = 0.0
    if cost.w_terminal and cost.goal is not None:
        far = np.maximum(np.abs(cost.goal - box_lo), np.abs(box_hi - cost.goal))
        L_T += 2.0 * cost.w_terminal * float(np.linalg.norm(far))
    if cost.s_matrix is not None:
        L_T += 2.0 * float(np.linalg.eigvalsh(cost.s_matrix)[-1]) \
            * float(np.linalg.norm(corners_far))
    return L, L_T
