"""Obstacle sets, set-erosion inflation, and differentiable sphere constraints.

Safety is membership in the complement of a union of closed obstacles.
Eroding the safe set by the tube radius r(t) is equivalent to inflating each
obstacle by r(t); inflated obstacles are replaced by a finite covering union
of spheres so that the optimizer sees smooth constraints
r_i^2 - ||x - a_i||^2 <= 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tube import RadiusCurve

__all__ = [
    "Obstacle",
    "ObstacleSet",
    "InflatedSet",
    "CoverBudgetError",
    "inflate_obstacles",
    "is_safe",
    "constraint_values",
    "erosion_feasible",
]

DEFAULT_SPHERE_BUDGET = 64
DEFAULT_COVER_TOL = 0.3
COVER_CHECK_SAMPLES = 10_000


class CoverBudgetError(RuntimeError):
    """Cover construction would exceed the per-obstacle sphere budget."""


@dataclass(frozen=True)
class Obstacle:
    """A sphere or axis-aligned box living in a projection of the state space."""

    kind: str  # "sphere" | "axis_box"
    projection_dims: tuple[int, ...]
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.projection_dims)
        if len(set(dims)) != len(dims):
            raise ValueError("projection_dims must be distinct")
        object.__setattr__(self, "projection_dims", dims)
        if self.kind == "sphere":
            center = np.atleast_1d(np.asarray(self.center, dtype=float))
            if center.size != len(dims):
                raise ValueError("center dimension must match projection_dims")
            if self.radius is None or self.radius <= 0:
                raise ValueError("sphere radius must be positive")
            object.__setattr__(self, "center", center)
        elif self.kind == "axis_box":
            lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
            hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
            if lo.size != len(dims) or hi.size != len(dims):
                raise ValueError("box corners must match projection_dims")
            if np.any(hi <= lo):
                raise ValueError("box corners must be ordered componentwise")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        else:
            raise ValueError(f"unknown obstacle kind: {self.kind}")

    @property
    def dim(self) -> int:
        return len(self.projection_dims)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-set membership for projected points of shape (..., dim)."""
        points = np.asarray(points, dtype=float)
        if self.kind == "sphere":
            d2 = np.sum((points - self.center) ** 2, axis=-1)
            return d2 <= self.radius ** 2
        inside = np.logical_and(points >= self.lo, points <= self.hi)
        return np.all(inside, axis=-1)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from projected points to the obstacle (0 inside)."""
        points = np.asarray(points, dtype=float)
        if self.kind == "sphere":
            d = np.linalg.norm(points - self.center, axis=-1) - self.radius
            return np.maximum(d, 0.0)
        gap = np.maximum(np.maximum(self.lo - points, points - self.hi), 0.0)
        return np.linalg.norm(gap, axis=-1)


@dataclass(frozen=True)
class ObstacleSet:
    obstacles: tuple[Obstacle, ...]

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def __len__(self) -> int:
        return len(self.obstacles)

    def unsafe_mask(self, states: np.ndarray) -> np.ndarray:
        """True where a (batch of) full state(s) touches any obstacle."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        mask = np.zeros(states.shape[0], dtype=bool)
        for obs in self.obstacles:
            proj = states[:, list(obs.projection_dims)]
            mask |= obs.contains(proj)
        return mask


def is_safe(point, obstacles: ObstacleSet) -> bool:
    """True iff the state lies strictly outside every (closed) obstacle."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    return not bool(obstacles.unsafe_mask(point[None, :])[0])


def _box_cell_counts(lengths: np.ndarray, cover_tol: float, budget: int) -> np.ndarray:
    d = lengths.size
    counts = np.array([max(1, math.ceil(length * math.sqrt(d) / (2.0 * cover_tol)))
                       for length in lengths], dtype=int)
    if int(np.prod(counts)) > budget:
        raise CoverBudgetError(
            f"box cover needs {int(np.prod(counts))} spheres (> budget {budget}); "
            "increase cover_tol or the sphere budget")
    return counts


def _base_cover(obstacle: Obstacle, cover_tol: float, budget: int):
    """Sphere centers and base radii whose union (each +r) covers obstacle + ball(r)."""
    if obstacle.kind == "sphere":
        return obstacle.center[None, :], np.array([obstacle.radius])
    lengths = obstacle.hi - obstacle.lo
    counts = _box_cell_counts(lengths, cover_tol, budget)
    cell = lengths / counts
    half_diag = 0.5 * float(np.linalg.norm(cell))
    axes = [obstacle.lo[i] + cell[i] * (np.arange(counts[i]) + 0.5)
            for i in range(lengths.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=-1)
    return centers, np.full(centers.shape[0], half_diag)


def _sample_inflated(obstacle: Obstacle, r: float, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample points from obstacle (+) ball(r) in projected coordinates."""
    if obstacle.kind == "sphere":
        lo = obstacle.center - (obstacle.radius + r)
        hi = obstacle.center + (obstacle.radius + r)
    else:
        lo = obstacle.lo - r
        hi = obstacle.hi + r
    points = np.empty((count, obstacle.dim))
    filled = 0
    while filled < count:
        batch = rng.uniform(lo, hi, size=(2 * (count - filled) + 16, obstacle.dim))
        keep = batch[obstacle.distance(batch) <= r + 1e-15]
        take = min(keep.shape[0], count - filled)
        points[filled:filled + take] = keep[:take]
        filled += take
    return points


@dataclass(frozen=True)
class InflatedSet:
    """Per-time covering spheres of the inflated obstacles.

    Sphere radii at grid index k are base_radii + r(t_k); centers and the
    projection dimensions are shared across time.
    """

    grid: np.ndarray
    radii: np.ndarray  # tube radius per grid time
    groups: tuple  # (projection_dims, centers (S,d), base_radii (S,), source index)
    state_dim_hint: Optional[int] = None

    @property
    def sphere_count(self) -> int:
        return sum(g[1].shape[0] for g in self.groups)

    def spheres_at(self, time_index: int):
        """Yield (projection_dims, centers, inflated radii, source) per group."""
        r = float(self.radii[time_index])
        for dims, centers, base, source in self.groups:
            yield dims, centers, base + r, source


def inflate_obstacles(obstacles: ObstacleSet, radius_curve: RadiusCurve,
                      cover_tol: float = DEFAULT_COVER_TOL,
                      budget: int = DEFAULT_SPHERE_BUDGET,
                      check_cover: bool = True) -> InflatedSet:
    """Build per-time covering spheres for every obstacle inflated by r(t).

    Spheres inflate exactly; boxes are covered by a grid of spheres whose
    union conservatively contains box (+) ball. Soundness is verified by
    rejection sampling at the worst (largest) radius.
    """
    if not np.all(np.isfinite(radius_curve.radii)):
        raise ValueError("radius curve must be finite")
    groups = []
    r_max = radius_curve.max_radius
    rng = np.random.default_rng(20240)
    for idx, obs in enumerate(obstacles.obstacles):
        centers, base = _base_cover(obs, cover_tol, budget)
        if check_cover and obs.kind == "axis_box":
            samples = _sample_inflated(obs, r_max, COVER_CHECK_SAMPLES, rng)
            d2 = np.sum((samples[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
            covered = np.any(d2 <= (base + r_max) ** 2 + 1e-12, axis=1)
            if not np.all(covered):
                raise CoverBudgetError(
                    f"cover of obstacle {idx} leaks {np.count_nonzero(~covered)} "
                    f"of {COVER_CHECK_SAMPLES} samples")
        groups.append((obs.projection_dims, centers, base, idx))
    return InflatedSet(grid=np.asarray(radius_curve.grid, dtype=float),
                       radii=np.asarray(radius_curve.radii, dtype=float),
                       groups=tuple(groups))


def constraint_values(point, inflated: InflatedSet, time_index: int):
    """Values g_i = r_i^2 - ||proj(x) - a_i||^2 and gradients d g_i / dx.

    All constraints satisfied iff every g_i <= 0. Gradients are scattered
    into full state coordinates.
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if not 0 <= time_index < inflated.grid.size:
        raise IndexError("time_index out of range")
    values = []
    grads = []
    for dims, centers, radii, _ in inflated.spheres_at(time_index):
        proj = point[list(dims)]
        diff = proj - centers  # (S, d)
        values.append(radii ** 2 - np.sum(diff * diff, axis=-1))
        g = np.zeros((centers.shape[0], point.size))
        g[:, list(dims)] = -2.0 * diff
        grads.append(g)
    if not values:
        return np.zeros(0), np.zeros((0, point.size))
    return np.concatenate(values), np.vstack(grads)


def violated_spheres(point, inflated: InflatedSet, time_index: int):
    """(source obstacle index, violation value) for every violated sphere."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    hits = []
    for dims, centers, radii, source in inflated.spheres_at(time_index):
        proj = point[list(dims)]
        vals = radii ** 2 - np.sum((proj - centers) ** 2, axis=-1)
        worst = float(vals.max()) if vals.size else -np.inf
        if worst > 0.0:
            hits.append((source, worst))
    return hits


def erosion_feasible(start, goal, inflated: InflatedSet) -> bool:
    """Fast preflight: start clear at t=0 and goal clear at the final sample."""
    if inflated.sphere_count == 0:
        return True
    start_hits = violated_spheres(start, inflated, 0)
    goal_hits = violated_spheres(goal, inflated, inflated.grid.size - 1)
    return not start_hits and not goal_hits
