"""Probabilistic tube radius and mean-square trajectory-gap bound.

The tube radius r(t) bounds the distance between a stochastic trajectory and
its associated deterministic trajectory, uniformly over the horizon with
probability at least 1 - delta, given a matrix-measure bound c on the drift
Jacobian and a diffusion bound sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "TubeParams",
    "RadiusCurve",
    "epsilon_coeffs",
    "tube_radius",
    "tube_curve",
    "mean_square_gap_bound",
    "DEFAULT_DT_FRACTION",
]

# |c| below this triggers the removable-singularity limit forms.
C_ZERO_TOL = 1e-9


def default_dt_param(horizon: float) -> float:
    return min(0.01, horizon / 100.0)


DEFAULT_DT_FRACTION = 0.01


def epsilon_coeffs(eps: float) -> tuple[float, float]:
    """Coefficients (log(1/(1-eps^2))/eps^2, 2/eps^2) of the tail bound."""
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    e2 = eps * eps
    return -math.log1p(-e2) / e2, 2.0 / e2


@dataclass(frozen=True)
class TubeParams:
    """Parameters of the tube radius formula.

    c: matrix-measure bound (1/s); sigma: diffusion bound; n: state dimension;
    delta: violation budget; eps in (0,1); dt_param in (0,T) (only used for
    c < 0); horizon T > 0.
    """

    c: float
    sigma: float
    n: int
    delta: float
    eps: float
    horizon: float
    dt_param: Optional[float] = None
    dt_defaulted: bool = False

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if self.sigma < 0.0:
            raise ValueError("sigma must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.dt_param is not None and not 0.0 < self.dt_param < self.horizon:
            raise ValueError("dt_param must lie in (0, horizon)")

    def with_default_dt(self) -> "TubeParams":
        if self.dt_param is not None:
            return self
        return TubeParams(self.c, self.sigma, self.n, self.delta, self.eps,
                          self.horizon, default_dt_param(self.horizon), dt_defaulted=True)


@dataclass(frozen=True)
class RadiusCurve:
    """Tube radius sampled on a time grid."""

    grid: np.ndarray
    radii: np.ndarray
    params: TubeParams

    def __post_init__(self):
        grid = np.atleast_1d(np.asarray(self.grid, dtype=float))
        radii = np.atleast_1d(np.asarray(self.radii, dtype=float))
        if grid.shape != radii.shape:
            raise ValueError("grid/radii length mismatch")
        if not np.all(np.isfinite(radii)) or np.any(radii < 0):
            raise ValueError("radii must be finite and nonnegative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "radii", radii)

    @property
    def max_radius(self) -> float:
        return float(self.radii.max())


def _stable_growth_factor(c: float, t: float) -> float:
    """(e^{2ct} - 1)/(2c), with limit t as c -> 0."""
    if abs(c) < C_ZERO_TOL:
        return t
    return math.expm1(2.0 * c * t) / (2.0 * c)


def tube_radius(params: TubeParams, t) -> float:
    """Tube radius at time t in [0, T]; vectorizes over array t."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < -1e-12) or np.any(t_arr > params.horizon + 1e-9):
        raise ValueError("t must lie in [0, horizon]")
    t_arr = np.clip(t_arr, 0.0, params.horizon)
    e1, e2 = epsilon_coeffs(params.eps)
    c, sigma, n, delta, horizon = (params.c, params.sigma, params.n,
                                   params.delta, params.horizon)
    if c >= 0.0:
        # -expm1(-2cT)/(2c) has limit T as c -> 0+
        if c < C_ZERO_TOL:
            factor = horizon
        else:
            factor = -math.expm1(-2.0 * c * horizon) / (2.0 * c)
        const = sigma * math.sqrt(factor * (e1 * n + e2 * math.log(1.0 / delta)))
        out = np.exp(c * t_arr) * const
    else:
        params = params.with_default_dt()
        dt = params.dt_param
        if dt is None:
            raise ValueError("dt_param required when c < 0")
        tail = math.sqrt(e1 * n + e2 * math.log(2.0 * horizon / (delta * dt)))
        offset = math.sqrt(math.expm1(-2.0 * c * dt))
        out = (sigma * (np.sqrt(-np.expm1(2.0 * c * t_arr)) + offset)
               / math.sqrt(-2.0 * c) * tail)
    if np.ndim(t) == 0:
        return float(out)
    return out


def tube_curve(params: TubeParams, grid) -> RadiusCurve:
    """Tube radius evaluated elementwise on a grid within [0, T]."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    params = params.with_default_dt() if params.c < 0 else params
    radii = np.atleast_1d(tube_radius(params, grid))
    return RadiusCurve(grid, radii, params)


def mean_square_gap_bound(c: float, sigma: float, n: int, t) -> float:
    """Upper bound n sigma^2 (e^{2ct} - 1)/(2c) on E||X_t - x_t||^2."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    if abs(c) < C_ZERO_TOL:
        out = n * sigma ** 2 * t_arr
    else:
        out = n * sigma ** 2 * np.expm1(2.0 * c * t_arr) / (2.0 * c)
    if np.ndim(t) == 0:
        return float(out)
    return out
