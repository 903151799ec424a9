"""Scenario schema: strict parsing of experiment configuration files.

Scenarios are YAML (or JSON) documents describing the system, tube
parameters, contraction-rate source, obstacle layout, boundary conditions,
cost weights, solver options and Monte Carlo settings. Unknown keys are
rejected so configs stay diff-able and reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import contraction as ct
from .dynamics import (ClosedLoopSpec, ControlCurve, SystemModel,
                       make_double_integrator, make_scalar_linear, make_unicycle)
from .geometry import Obstacle, ObstacleSet
from .optimizer import Boundary, CostSpec, SolveOptions
from .tube import TubeParams

__all__ = ["Scenario", "ScenarioError", "load_scenario", "scenario_hash"]


class ScenarioError(ValueError):
    """Invalid or inconsistent scenario document."""


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ScenarioError(f"missing key '{key}' in {context}")
    return mapping[key]


def _check_keys(mapping: dict, allowed: set[str], context: str):
    if not isinstance(mapping, dict):
        raise ScenarioError(f"{context} must be a mapping")
    unknown = set(mapping) - allowed
    if unknown:
        raise ScenarioError(f"unknown keys {sorted(unknown)} in {context}")


@dataclass(frozen=True)
class SystemConfig:
    kind: str
    params: dict


@dataclass(frozen=True)
class ContractionConfig:
    mode: str  # given | lmi | sampled
    value: Optional[float] = None
    tol: float = 1e-6
    boxes: Optional[dict] = None
    grid_density: int = 3


@dataclass(frozen=True)
class BoundaryConfig:
    start: np.ndarray
    goal: np.ndarray
    pinned_start: tuple[int, ...]
    pinned_goal: tuple[int, ...]


@dataclass(frozen=True)
class CostConfig:
    w_init: float = 1.0
    w_u: float = 0.5
    w_track: float = 1.0
    w_terminal: float = 0.0


@dataclass(frozen=True)
class SolverConfig:
    knots: int = 50
    feas_tol: float = 1e-6
    opt_tol: float = 1e-3
    max_outer: int = 30
    max_inner: int = 800
    cover_tol: float = 0.3
    sphere_budget: int = 64
    multistart: int = 1
    multistart_seed: int = 7


@dataclass(frozen=True)
class McConfig:
    trials: int = 5000
    step: float = 1e-3
    seed: int = 1234


@dataclass(frozen=True)
class RateInfo:
    tube_rate: float
    tube_estimate: ct.ContractionEstimate
    l2_rate: float
    l2_method: str
    notes: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    system: SystemConfig
    tube: dict
    contraction_cfg: ContractionConfig
    obstacles: tuple[Obstacle, ...]
    boundary: Optional[BoundaryConfig]
    cost: CostConfig
    solver: SolverConfig
    mc: McConfig
    control_bounds: Optional[tuple[np.ndarray, np.ndarray]]
    raw: dict

    # -- model construction ---------------------------------------------------
    def build_closed_loop(self) -> Optional[ClosedLoopSpec]:
        kind = self.system.kind
        p = self.system.params
        if kind == "double_integrator":
            gain = p.get("gain")
            gain = None if gain in (None, "default") else np.asarray(gain, float)
            return make_double_integrator(mass=p.get("mass", 1.0), gain=gain,
                                          noise_scale=p.get("noise_scale", 0.08))
        if kind == "unicycle":
            return make_unicycle(k_x=p.get("k_x", 0.5), k_y=p.get("k_y", 0.5),
                                 k_theta=p.get("k_theta", 0.8),
                                 noise_scale=p.get("noise_scale", 0.04))
        return None

    def build_nominal(self) -> SystemModel:
        kind = self.system.kind
        p = self.system.params
        if kind == "scalar_linear":
            model = make_scalar_linear(p["c"], p["sigma"])
        else:
            closed = self.build_closed_loop()
            if closed is None:
                raise ScenarioError(f"unsupported system kind '{kind}'")
            model = closed.base
        if self.control_bounds is not None:
            model = SystemModel(
                state_dim=model.state_dim, control_dim=model.control_dim,
                noise_dim=model.noise_dim, drift=model.drift,
                diffusion=model.diffusion, drift_jacobian=model.drift_jacobian,
                control_jacobian=model.control_jacobian,
                control_bounds=self.control_bounds, name=model.name)
        return model

    @property
    def state_dim(self) -> int:
        return 1 if self.system.kind == "scalar_linear" else \
            (6 if self.system.kind == "double_integrator" else 3)

    @property
    def noise_bound(self) -> float:
        p = self.system.params
        if self.system.kind == "scalar_linear":
            return float(p["sigma"])
        return float(p.get("noise_scale", 0.08 if self.system.kind == "double_integrator" else 0.04))

    # -- contraction-rate resolution -------------------------------------------
    def resolve_rates(self) -> RateInfo:
        cfg = self.contraction_cfg
        notes: dict = {}
        if self.system.kind == "scalar_linear":
            c = float(self.system.params["c"])
            est = ct.ContractionEstimate(rate=c, method="given",
                                         notes={"source": "scalar drift coefficient"})
            return RateInfo(c, est, c, "exact", notes)
        if cfg.mode == "given":
            if cfg.value is None:
                raise ScenarioError("contraction mode 'given' requires a value")
            est = ct.ContractionEstimate(rate=float(cfg.value), method="given")
            return RateInfo(float(cfg.value), est, float(cfg.value), "given", notes)
        closed = self.build_closed_loop()
        if cfg.mode == "lmi":
            a_cl = closed.gains.get("A_cl")
            if a_cl is None:
                raise ScenarioError("contraction mode 'lmi' requires a linear closed loop")
            est = ct.optimal_contraction_rate(a_cl, tol=cfg.tol)
            l2 = ct.matrix_measure_l2(a_cl)
            notes["witness_condition_number"] = est.witness_condition_number
            notes["caveat"] = ("tube rate certified in a P-weighted norm; the l2 "
                               "log norm of the closed loop is reported separately")
            return RateInfo(est.rate, est, l2, "l2_measure", notes)
        if cfg.mode == "sampled":
            if not cfg.boxes:
                raise ScenarioError("contraction mode 'sampled' requires boxes")
            boxes = {k: np.asarray(v, dtype=float) for k, v in cfg.boxes.items()}
            est = ct.sampled_contraction_rate(closed, boxes, grid_density=cfg.grid_density)
            notes["domain"] = est.domain
            return RateInfo(est.rate, est, est.rate, "sampled", notes)
        raise ScenarioError(f"unknown contraction mode '{cfg.mode}'")

    # -- derived specs ----------------------------------------------------------
    def tube_params(self, c: Optional[float] = None) -> TubeParams:
        t = self.tube
        if c is None:
            c = self.resolve_rates().tube_rate
        try:
            return TubeParams(
                c=float(c), sigma=self.noise_bound, n=self.state_dim,
                delta=float(_require(t, "delta", "tube")),
                eps=float(_require(t, "epsilon", "tube")),
                horizon=float(_require(t, "horizon", "tube")),
                dt_param=(float(t["dt_param"]) if t.get("dt_param") is not None else None),
            ).with_default_dt()
        except ValueError as err:
            raise ScenarioError(str(err)) from err

    def obstacle_set(self) -> ObstacleSet:
        return ObstacleSet(self.obstacles)

    def boundary_spec(self) -> Boundary:
        if self.boundary is None:
            raise ScenarioError("scenario has no boundary section (planning requires one)")
        b = self.boundary
        return Boundary(b.start, b.goal, b.pinned_start, b.pinned_goal)

    def straight_line_curve(self, horizon: float) -> ControlCurve:
        b = self.boundary
        return ControlCurve([0.0, horizon], np.vstack([b.start, b.goal]))

    def cost_spec(self, times, x_ref_curve: Optional[ControlCurve] = None) -> CostSpec:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return CostSpec(
            w_init=self.cost.w_init, w_u=self.cost.w_u,
            w_track=self.cost.w_track, w_terminal=self.cost.w_terminal,
            x_init_curve=self.straight_line_curve(times[-1]),
            x_ref_curve=x_ref_curve,
            goal=self.boundary.goal if self.boundary is not None else None,
        )

    def solve_options(self) -> SolveOptions:
        s = self.solver
        return SolveOptions(feas_tol=s.feas_tol, opt_tol=s.opt_tol,
                            max_outer=s.max_outer, max_inner=s.max_inner)

    @property
    def digest(self) -> str:
        return scenario_hash(self.raw)


def scenario_hash(raw: dict) -> str:
    payload = json.dumps(raw, sort_keys=True, default=float).encode()
    return hashlib.sha256(payload).hexdigest()


_SYSTEM_KEYS = {
    "scalar_linear": {"kind", "c", "sigma"},
    "double_integrator": {"kind", "mass", "noise_scale", "gain"},
    "unicycle": {"kind", "k_x", "k_y", "k_theta", "noise_scale"},
}


def _parse_obstacle(entry: dict, idx: int) -> Obstacle:
    context = f"obstacles[{idx}]"
    kind = _require(entry, "kind", context)
    if kind == "sphere":
        _check_keys(entry, {"kind", "center", "radius", "projection_dims"}, context)
        return Obstacle(kind="sphere",
                        projection_dims=tuple(_require(entry, "projection_dims", context)),
                        center=np.asarray(_require(entry, "center", context), float),
                        radius=float(_require(entry, "radius", context)))
    if kind == "axis_box":
        _check_keys(entry, {"kind", "lo", "hi", "projection_dims"}, context)
        return Obstacle(kind="axis_box",
                        projection_dims=tuple(_require(entry, "projection_dims", context)),
                        lo=np.asarray(_require(entry, "lo", context), float),
                        hi=np.asarray(_require(entry, "hi", context), float))
    raise ScenarioError(f"unknown obstacle kind '{kind}' in {context}")


def _parse_pins(spec, dim: int, context: str) -> tuple[int, ...]:
    if spec in (None, "all"):
        return tuple(range(dim))
    if spec == "none":
        return ()
    pins = tuple(int(i) for i in spec)
    if any(i < 0 or i >= dim for i in pins):
        raise ScenarioError(f"{context} indices out of range")
    return pins


def parse_scenario(raw: dict) -> Scenario:
    _check_keys(raw, {"name", "system", "tube", "contraction", "obstacles",
                      "boundary", "cost", "solver", "mc", "control_bounds"},
                "scenario")
    system_raw = _require(raw, "system", "scenario")
    kind = _require(system_raw, "kind", "system")
    if kind not in _SYSTEM_KEYS:
        raise ScenarioError(f"unknown system kind '{kind}'")
    _check_keys(system_raw, _SYSTEM_KEYS[kind], "system")
    params = {k: v for k, v in system_raw.items() if k != "kind"}
    if kind == "scalar_linear":
        for key in ("c", "sigma"):
            _require(system_raw, key, "system")

    tube_raw = _require(raw, "tube", "scenario")
    _check_keys(tube_raw, {"delta", "epsilon", "horizon", "dt_param"}, "tube")

    contraction_raw = raw.get("contraction", {"mode": "given"})
    _check_keys(contraction_raw, {"mode", "value", "tol", "boxes", "grid_density"},
                "contraction")
    mode = contraction_raw.get("mode", "given" if kind == "scalar_linear" else "lmi")
    contraction_cfg = ContractionConfig(
        mode=mode,
        value=contraction_raw.get("value"),
        tol=float(contraction_raw.get("tol", 1e-6)),
        boxes=contraction_raw.get("boxes"),
        grid_density=int(contraction_raw.get("grid_density", 3)),
    )

    obstacles = tuple(_parse_obstacle(o, i) for i, o in enumerate(raw.get("obstacles", [])))

    boundary = None
    if "boundary" in raw and raw["boundary"] is not None:
        b = raw["boundary"]
        _check_keys(b, {"start", "goal", "pinned_start", "pinned_goal"}, "boundary")
        start = np.asarray(_require(b, "start", "boundary"), float)
        goal = np.asarray(_require(b, "goal", "boundary"), float)
        if start.size != goal.size:
            raise ScenarioError("boundary start/goal dimension mismatch")
        boundary = BoundaryConfig(
            start=start, goal=goal,
            pinned_start=_parse_pins(b.get("pinned_start"), start.size, "pinned_start"),
            pinned_goal=_parse_pins(b.get("pinned_goal"), goal.size, "pinned_goal"))

    cost_raw = raw.get("cost", {})
    _check_keys(cost_raw, {"w_init", "w_u", "w_track", "w_terminal"}, "cost")
    cost = CostConfig(**{k: float(v) for k, v in cost_raw.items()})

    solver_raw = raw.get("solver", {})
    _check_keys(solver_raw, {"knots", "feas_tol", "opt_tol", "max_outer", "max_inner",
                             "cover_tol", "sphere_budget", "multistart",
                             "multistart_seed"}, "solver")
    _int_fields = {"knots", "max_outer", "max_inner", "sphere_budget",
                   "multistart", "multistart_seed"}
    solver = SolverConfig(**{k: (int(v) if k in _int_fields else float(v))
                             for k, v in solver_raw.items()})

    mc_raw = raw.get("mc", {})
    _check_keys(mc_raw, {"trials", "step", "seed"}, "mc")
    mc = McConfig(trials=int(mc_raw.get("trials", 5000)),
                  step=float(mc_raw.get("step", 1e-3)),
                  seed=int(mc_raw.get("seed", 1234)))

    bounds = None
    if raw.get("control_bounds") is not None:
        cb = raw["control_bounds"]
        _check_keys(cb, {"lo", "hi"}, "control_bounds")
        bounds = (np.asarray(_require(cb, "lo", "control_bounds"), float),
                  np.asarray(_require(cb, "hi", "control_bounds"), float))

    scenario = Scenario(
        name=str(raw.get("name", "scenario")), system=SystemConfig(kind, params),
        tube=dict(tube_raw), contraction_cfg=contraction_cfg, obstacles=obstacles,
        boundary=boundary, cost=cost, solver=solver, mc=mc,
        control_bounds=bounds, raw=raw,
    )
    scenario.tube_params(c=0.0)  # validate tube fields eagerly
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        raw = json.loads(text)
    else:
        raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must contain a mapping")
    return parse_scenario(raw)
