"""Continuous-time system models and fixed-step integrators.

Models are immutable containers of drift/diffusion callables. All callables
follow a batched convention: the state ``x`` may be ``(n,)`` or ``(B, n)``
and the output carries the same leading shape, so Monte Carlo ensembles can
be advanced with a single call per time step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "DivergenceError",
    "SystemModel",
    "Trajectory",
    "ControlCurve",
    "ClosedLoopSpec",
    "make_scalar_linear",
    "make_double_integrator",
    "make_unicycle",
    "integrate_deterministic",
    "simulate_stochastic",
]


class DivergenceError(RuntimeError):
    """Raised when an integrator produces a non-finite state."""

    def __init__(self, time: float):
        super().__init__(f"non-finite state encountered at t={time:.6g}")
        self.time = time


def _finite_difference_jacobian(fun, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        step = eps * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        jac[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * step)
    return jac


@dataclass(frozen=True)
class SystemModel:
    """Continuous-time model dX = f(X, u, t) dt + g(X, t) dW."""

    state_dim: int
    control_dim: int
    noise_dim: int
    drift: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    diffusion: Callable[[np.ndarray, float], np.ndarray]
    drift_jacobian: Optional[Callable[[np.ndarray, np.ndarray, float], np.ndarray]] = None
    control_jacobian: Optional[Callable[[np.ndarray, np.ndarray, float], np.ndarray]] = None
    control_bounds: Optional[tuple[np.ndarray, np.ndarray]] = None
    name: str = "system"

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 0 or self.noise_dim < 0:
            raise ValueError("dimensions must be positive")

    def state_jacobian(self, x, u, t):
        """df/dx at a single point; analytic if supplied, else central differences."""
        if self.drift_jacobian is not None:
            return np.asarray(self.drift_jacobian(np.asarray(x, float), np.asarray(u, float), t))
        u = np.asarray(u, float)
        return _finite_difference_jacobian(lambda xx: self.drift(xx, u, t), x)

    def input_jacobian(self, x, u, t):
        """df/du at a single point; analytic if supplied, else central differences."""
        if self.control_jacobian is not None:
            return np.asarray(self.control_jacobian(np.asarray(x, float), np.asarray(u, float), t))
        x = np.asarray(x, float)
        return _finite_difference_jacobian(lambda uu: self.drift(x, uu, t), u)


@dataclass(frozen=True)
class Trajectory:
    """States and controls sampled on a strictly increasing time grid."""

    grid: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        grid = np.atleast_1d(np.asarray(self.grid, dtype=float))
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if states.shape[0] != grid.size or controls.shape[0] != grid.size:
            raise ValueError("states/controls rows must match grid length")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])


class ControlCurve:
    """Piecewise-linear control curve defined by knot times and values."""

    def __init__(self, times, values):
        self.times = np.atleast_1d(np.asarray(times, dtype=float))
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.values = values
        if self.times.size != self.values.shape[0]:
            raise ValueError("times and values length mismatch")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def constant(cls, value, horizon: float) -> "ControlCurve":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls([0.0, max(horizon, 1e-12)], np.vstack([value, value]))

    @classmethod
    def zero(cls, dim: int, horizon: float) -> "ControlCurve":
        return cls.constant(np.zeros(dim), horizon)

    def at(self, t):
        """Interpolated values; returns (p,) for scalar t, (K, p) for array t."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tq = np.atleast_1d(t)
        out = np.empty((tq.size, self.dim))
        for j in range(self.dim):
            out[:, j] = np.interp(tq, self.times, self.values[:, j])
        return out[0] if scalar else out

    def __call__(self, t):
        return self.at(t)


@dataclass(frozen=True)
class ClosedLoopSpec:
    """A base model plus a static tracking feedback law.

    The closed loop is itself a valid :class:`SystemModel` whose "control"
    is the stacked vector (reference state, feedforward control).
    """

    base: SystemModel
    feedback: Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]
    gains: dict = field(default_factory=dict)
    state_jacobian_fn: Optional[Callable] = None
    name: str = "closed_loop"

    @property
    def state_dim(self) -> int:
        return self.base.state_dim

    @property
    def ref_control_dim(self) -> int:
        return self.base.state_dim + self.base.control_dim

    def split_control(self, c):
        c = np.asarray(c, dtype=float)
        n = self.base.state_dim
        return c[..., :n], c[..., n:]

    def applied_control(self, x, c, t):
        x_ref, u_ff = self.split_control(c)
        return self.feedback(np.asarray(x, float), x_ref, u_ff, t)

    def closed_loop_jacobian(self, x, x_ref, u_ff, t):
        """State Jacobian of the closed-loop drift at a single point."""
        if self.state_jacobian_fn is not None:
            return np.asarray(self.state_jacobian_fn(np.asarray(x, float),
                                                     np.asarray(x_ref, float),
                                                     np.asarray(u_ff, float), t))
        c = np.concatenate([np.asarray(x_ref, float), np.asarray(u_ff, float)])
        sys = self.as_system()
        return _finite_difference_jacobian(lambda xx: sys.drift(xx, c, t), x)

    def as_system(self) -> SystemModel:
        base = self.base

        def drift(x, c, t):
            u = self.applied_control(x, c, t)
            return base.drift(x, u, t)

        def diffusion(x, t):
            return base.diffusion(x, t)

        def jac(x, c, t):
            x_ref, u_ff = self.split_control(c)
            return self.closed_loop_jacobian(x, x_ref, u_ff, t)

        return SystemModel(
            state_dim=base.state_dim,
            control_dim=self.ref_control_dim,
            noise_dim=base.noise_dim,
            drift=drift,
            diffusion=diffusion,
            drift_jacobian=jac,
            name=f"{self.name}(closed)",
        )


def make_scalar_linear(c: float, sigma: float) -> SystemModel:
    """1-D linear model dX = c X dt + sigma dW (control channel unused)."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    c = float(c)
    sigma = float(sigma)
    g = np.array([[sigma]])

    def drift(x, u, t):
        return c * np.asarray(x, dtype=float)

    return SystemModel(
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        drift=drift,
        diffusion=lambda x, t: g,
        drift_jacobian=lambda x, u, t: np.array([[c]]),
        control_jacobian=lambda x, u, t: np.array([[0.0]]),
        name=f"scalar_linear(c={c:g})",
    )


def double_integrator_matrices(mass: float = 1.0):
    a = np.zeros((6, 6))
    a[:3, 3:] = np.eye(3)
    b = np.zeros((6, 3))
    b[3:, :] = np.eye(3) / mass
    return a, b


DEFAULT_DI_GAIN = np.hstack([-10.0 * np.eye(3), -5.0 * np.eye(3)])


def make_double_integrator(mass: float = 1.0, gain: Optional[np.ndarray] = None,
                           noise_scale: float = 0.08) -> ClosedLoopSpec:
    """3-D double integrator with linear tracking feedback u = u_ff + K(x - x_ref).

    The closed-loop state matrix is A + B K, which is Hurwitz for the default
    gain K = [-10 I3, -5 I3].
    """
    if mass <= 0:
        raise ValueError("mass must be positive")
    gain = DEFAULT_DI_GAIN.copy() if gain is None else np.asarray(gain, dtype=float)
    if gain.shape != (3, 6):
        raise ValueError("gain must be a 3x6 matrix")
    a, b = double_integrator_matrices(mass)
    a_cl = a + b @ gain
    g = noise_scale * np.eye(6)

    def drift(x, u, t):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return x @ a.T + u @ b.T

    base = SystemModel(
        state_dim=6,
        control_dim=3,
        noise_dim=6,
        drift=drift,
        diffusion=lambda x, t: g,
        drift_jacobian=lambda x, u, t: a,
        control_jacobian=lambda x, u, t: b,
        name="double_integrator",
    )

    def feedback(x, x_ref, u_ff, t):
        return u_ff + (x - x_ref) @ gain.T

    return ClosedLoopSpec(
        base=base,
        feedback=feedback,
        gains={"K": gain, "A": a, "B": b, "A_cl": a_cl},
        state_jacobian_fn=lambda x, x_ref, u_ff, t: a_cl,
        name="double_integrator",
    )


def make_unicycle(k_x: float = 0.5, k_y: float = 0.5, k_theta: float = 0.8,
                  noise_scale: float = 0.04) -> ClosedLoopSpec:
    """Kinematic unicycle [px, py, theta] with the body-frame tracking controller.

    v     = v* + Kx ( cos(th) ex + sin(th) ey)
    omega = w* + Ky (-sin(th) ex + cos(th) ey) + Kth (th* - th)
    with tracking error e = p* - p.
    """
    g = noise_scale * np.eye(3)

    def drift(x, u, t):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        th = x[..., 2]
        v = u[..., 0]
        w = u[..., 1]
        return np.stack([v * np.cos(th), v * np.sin(th), w * np.ones_like(th)], axis=-1)

    def jac(x, u, t):
        th = float(np.asarray(x, float)[2])
        v = float(np.asarray(u, float)[0])
        return np.array([
            [0.0, 0.0, -v * math.sin(th)],
            [0.0, 0.0, v * math.cos(th)],
            [0.0, 0.0, 0.0],
        ])

    def bjac(x, u, t):
        th = float(np.asarray(x, float)[2])
        return np.array([
            [math.cos(th), 0.0],
            [math.sin(th), 0.0],
            [0.0, 1.0],
        ])

    base = SystemModel(
        state_dim=3,
        control_dim=2,
        noise_dim=3,
        drift=drift,
        diffusion=lambda x, t: g,
        drift_jacobian=jac,
        control_jacobian=bjac,
        name="unicycle",
    )

    def feedback(x, x_ref, u_ff, t):
        x = np.asarray(x, dtype=float)
        ex = x_ref[..., 0] - x[..., 0]
        ey = x_ref[..., 1] - x[..., 1]
        th = x[..., 2]
        ct, st = np.cos(th), np.sin(th)
        v = u_ff[..., 0] + k_x * (ct * ex + st * ey)
        w = u_ff[..., 1] + k_y * (-st * ex + ct * ey) + k_theta * (x_ref[..., 2] - th)
        return np.stack([v, w], axis=-1)

    def cl_jac(x, x_ref, u_ff, t):
        px, py, th = (float(v) for v in np.asarray(x, float))
        ex = float(x_ref[0]) - px
        ey = float(x_ref[1]) - py
        ct, st = math.cos(th), math.sin(th)
        v = float(u_ff[0]) + k_x * (ct * ex + st * ey)
        dv = np.array([-k_x * ct, -k_x * st, k_x * (-st * ex + ct * ey)])
        dw = np.array([k_y * st, -k_y * ct, k_y * (-ct * ex - st * ey) - k_theta])
        row1 = ct * dv + np.array([0.0, 0.0, -v * st])
        row2 = st * dv + np.array([0.0, 0.0, v * ct])
        return np.vstack([row1, row2, dw])

    return ClosedLoopSpec(
        base=base,
        feedback=feedback,
        gains={"K_x": k_x, "K_y": k_y, "K_theta": k_theta},
        state_jacobian_fn=cl_jac,
        name="unicycle",
    )


def _control_at(controls, t, dim):
    if controls is None:
        return np.zeros(dim)
    if isinstance(controls, ControlCurve):
        return controls.at(t)
    return np.asarray(controls(t), dtype=float)


def integrate_deterministic(model: SystemModel, x0, controls, grid) -> Trajectory:
    """Classical RK4 with fixed substeps <= 1e-3 * horizon per interval."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid[0] != 0.0 or (grid.size > 1 and np.any(np.diff(grid) <= 0)):
        raise ValueError("grid must start at 0 and increase strictly")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    p = model.control_dim
    if grid.size == 1:
        return Trajectory(grid, x0[None, :], _control_at(controls, 0.0, p)[None, :])
    horizon = grid[-1]
    h_max = 1e-3 * horizon
    states = np.empty((grid.size, model.state_dim))
    knot_controls = np.empty((grid.size, p))
    states[0] = x0
    knot_controls[0] = _control_at(controls, 0.0, p)
    x = x0.copy()
    for k in range(grid.size - 1):
        dt = grid[k + 1] - grid[k]
        nsub = max(1, int(math.ceil(dt / h_max - 1e-12)))
        h = dt / nsub
        t = grid[k]
        for _ in range(nsub):
            u1 = _control_at(controls, t, p)
            u2 = _control_at(controls, t + 0.5 * h, p)
            u3 = _control_at(controls, t + h, p)
            k1 = model.drift(x, u1, t)
            k2 = model.drift(x + 0.5 * h * k1, u2, t + 0.5 * h)
            k3 = model.drift(x + 0.5 * h * k2, u2, t + 0.5 * h)
            k4 = model.drift(x + h * k3, u3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            if not np.all(np.isfinite(x)):
                raise DivergenceError(t)
        states[k + 1] = x
        knot_controls[k + 1] = _control_at(controls, grid[k + 1], p)
    return Trajectory(grid, states, knot_controls)


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Per-trajectory RNG stream keyed by (master seed, trial index)."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),)))


def euler_maruyama_steps(horizon: float, step: float) -> np.ndarray:
    """Uniform simulation times 0..T with spacing `step` (last step clipped)."""
    if step <= 0:
        raise ValueError("step must be positive")
    nsteps = max(1, int(round(horizon / step)))
    return np.linspace(0.0, horizon, nsteps + 1)


def ensemble_euler_maruyama(model: SystemModel, x0, controls, times, seed: int,
                            trials: int, on_step, chunk: int = 1000, index_base: int = 0):
    """Advance `trials` Euler-Maruyama paths, invoking `on_step` per step.

    on_step(step_index, t, X, trial_slice) is called with the batch state
    X of shape (B, n) after initialization (step 0) and after every step.
    Trial i always draws its noise from trial_rng(seed, index_base + i),
    so results are bit-identical for any chunk size or schedule.
    """
    times = np.asarray(times, dtype=float)
    nsteps = times.size - 1
    n, m, p = model.state_dim, model.noise_dim, model.control_dim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    u_steps = np.empty((times.size, p))
    for k, t in enumerate(times):
        u_steps[k] = _control_at(controls, t, p)
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        noise = np.empty((size, nsteps, m))
        for i in range(size):
            noise[i] = trial_rng(seed, index_base + start + i).standard_normal((nsteps, m))
        x = np.broadcast_to(x0, (size, n)).copy()
        on_step(0, times[0], x, slice(start, start + size))
        for k in range(nsteps):
            h = times[k + 1] - times[k]
            sh = math.sqrt(h)
            f = model.drift(x, u_steps[k], times[k])
            g = np.asarray(model.diffusion(x, times[k]))
            if g.ndim == 2:
                dw = noise[:, k, :] @ g.T
            else:
                dw = np.einsum("bnm,bm->bn", g, noise[:, k, :])
            x = x + h * f + sh * dw
            on_step(k + 1, times[k + 1], x, slice(start, start + size))


def simulate_stochastic(model: SystemModel, x0, controls, grid, step: float,
                        seed: int, trial_index: int = 0) -> Trajectory:
    """Single Euler-Maruyama path recorded at the nearest simulation steps to `grid`."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    times = euler_maruyama_steps(grid[-1], step)
    record_idx = np.searchsorted(times, grid - 1e-12)
    record_idx = np.clip(record_idx, 0, times.size - 1)
    states = np.empty((grid.size, model.state_dim))
    diverged = [None]

    def on_step(k, t, x, sl):
        if not np.all(np.isfinite(x)) and diverged[0] is None:
            diverged[0] = t
        hits = np.nonzero(record_idx == k)[0]
        for j in hits:
            states[j] = x[0]

    ensemble_euler_maruyama(model, x0, controls, times, seed, 1, on_step,
                            index_base=trial_index)
    if diverged[0] is not None:
        raise DivergenceError(diverged[0])
    p = model.control_dim
    knot_controls = np.vstack([_control_at(controls, t, p) for t in grid])
    return Trajectory(grid, states, knot_controls)
