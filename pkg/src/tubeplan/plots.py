"""Self-contained SVG plots for tube curves, plans and ensembles."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Circle, Rectangle

from .geometry import ObstacleSet


def plot_tube_curve(grid, radii, path, title="probabilistic tube radius"):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(grid, radii, color="tab:blue")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("r(t)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def _axis_pairs(state_dim):
    if state_dim >= 6:
        return [(0, 1), (0, 2), (1, 2)]
    return [(0, 1)]


def _draw_obstacles(ax, obstacles: ObstacleSet, pair, r_lo=0.0, r_hi=0.0):
    for obs in obstacles.obstacles:
        dims = obs.projection_dims
        if pair[0] not in dims or pair[1] not in dims:
            continue
        i, j = dims.index(pair[0]), dims.index(pair[1])
        if obs.kind == "sphere":
            c = (obs.center[i], obs.center[j])
            if r_hi > 0:
                ax.add_patch(Circle(c, obs.radius + r_hi, color="red", alpha=0.12))
            if r_lo > 0:
                ax.add_patch(Circle(c, obs.radius + r_lo, color="red", alpha=0.2,
                                    fill=False, linestyle="--"))
            ax.add_patch(Circle(c, obs.radius, color="red", alpha=0.75))
        else:
            lo = (obs.lo[i], obs.lo[j])
            w, h = obs.hi[i] - obs.lo[i], obs.hi[j] - obs.lo[j]
            if r_hi > 0:
                ax.add_patch(Rectangle((lo[0] - r_hi, lo[1] - r_hi),
                                       w + 2 * r_hi, h + 2 * r_hi,
                                       color="red", alpha=0.12))
            ax.add_patch(Rectangle(lo, w, h, color="red", alpha=0.75))


def plot_plan(trajectory, obstacles, r_start, r_end, path, title="planned trajectory"):
    pairs = _axis_pairs(trajectory.states.shape[1])
    fig, axes = plt.subplots(1, len(pairs), figsize=(5 * len(pairs), 4.5))
    if len(pairs) == 1:
        axes = [axes]
    for ax, pair in zip(axes, pairs):
        _draw_obstacles(ax, obstacles, pair, r_lo=r_start, r_hi=r_end)
        ax.plot(trajectory.states[:, pair[0]], trajectory.states[:, pair[1]],
                color="tab:blue", lw=2)
        ax.scatter(*trajectory.states[0, list(pair)], color="green", zorder=5)
        ax.scatter(*trajectory.states[-1, list(pair)], color="black", zorder=5)
        ax.set_xlabel(f"x[{pair[0]}]")
        ax.set_ylabel(f"x[{pair[1]}]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.grid(True, alpha=0.3)
    fig.suptitle(title)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def plot_ensemble(sample_paths, det_trajectory, obstacles, path,
                  title="stochastic ensemble"):
    pairs = _axis_pairs(det_trajectory.states.shape[1])
    fig, axes = plt.subplots(1, len(pairs), figsize=(5 * len(pairs), 4.5))
    if len(pairs) == 1:
        axes = [axes]
    for ax, pair in zip(axes, pairs):
        _draw_obstacles(ax, obstacles, pair)
        if sample_paths is not None:
            for trial in sample_paths:
                ax.plot(trial[:, pair[0]], trial[:, pair[1]], color="tab:gray",
                        alpha=0.25, lw=0.6)
        ax.plot(det_trajectory.states[:, pair[0]], det_trajectory.states[:, pair[1]],
                color="tab:blue", lw=2)
        ax.set_xlabel(f"x[{pair[0]}]")
        ax.set_ylabel(f"x[{pair[1]}]")
        ax.set_aspect("equal", adjustable="datalim")
        ax.grid(True, alpha=0.3)
    fig.suptitle(title)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def plot_cost_curves(times, mean, se, det, path, title="cumulative cost"):
    times = np.asarray(times)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, det, color="tab:red", label="deterministic")
    ax.plot(times, mean, color="tab:blue", ls="--", label="stochastic mean")
    ax.fill_between(times, mean - 2 * se, mean + 2 * se, color="tab:blue", alpha=0.2)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("cumulative cost")
    ax.legend()
    ax.grid(True, alpha=0.3)
    ax.set_title(title)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
