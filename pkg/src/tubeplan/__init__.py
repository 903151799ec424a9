"""Chance-constrained trajectory optimization via probabilistic tubes.

Workflow: certify a contraction rate for the (closed-loop) dynamics, turn it
into a uniform-in-time high-probability tube radius around the deterministic
trajectory, erode the free space by that radius, solve the deterministic
trajectory optimization on the eroded set, and validate the stochastic
closed loop by Monte Carlo.
"""

from .contraction import (ContractionEstimate, lyapunov_feasible,
                          matrix_measure_l2, optimal_contraction_rate,
                          sampled_contraction_rate, spectral_abscissa)
from .dynamics import (ClosedLoopSpec, ControlCurve, DivergenceError,
                       SystemModel, Trajectory, integrate_deterministic,
                       make_double_integrator, make_scalar_linear,
                       make_unicycle, simulate_stochastic)
from .geometry import (CoverBudgetError, InflatedSet, Obstacle, ObstacleSet,
                       constraint_values, erosion_feasible, inflate_obstacles,
                       is_safe)
from .optimizer import (Boundary, CostSpec, InfeasibleErosionError, PlanResult,
                        SolveOptions, TranscribedProblem, evaluate_cost, plan,
                        solve, transcribe)
from .scenario import Scenario, ScenarioError, load_scenario, scenario_hash
from .tube import (RadiusCurve, TubeParams, epsilon_coeffs,
                   mean_square_gap_bound, tube_curve, tube_radius)
from .verify import (GapCurve, McReport, cost_gap_bound_lipschitz,
                     cost_gap_bound_smooth, lipschitz_closed_form_positive_rate,
                     lipschitz_closed_form_zero_rate, lipschitz_gap_envelope,
                     lipschitz_gap_integral, mc_chance_constraint,
                     mc_mean_square_gap, mc_tube_containment)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # dynamics
    "DivergenceError", "SystemModel", "Trajectory", "ControlCurve",
    "ClosedLoopSpec", "make_scalar_linear", "make_double_integrator",
    "make_unicycle", "integrate_deterministic", "simulate_stochastic",
    # tube
    "TubeParams", "RadiusCurve", "epsilon_coeffs", "tube_radius",
    "tube_curve", "mean_square_gap_bound",
    # contraction
    "ContractionEstimate", "matrix_measure_l2", "spectral_abscissa",
    "lyapunov_feasible", "optimal_contraction_rate", "sampled_contraction_rate",
    # geometry
    "Obstacle", "ObstacleSet", "InflatedSet", "CoverBudgetError",
    "inflate_obstacles", "is_safe", "constraint_values", "erosion_feasible",
    # optimizer
    "CostSpec", "Boundary", "TranscribedProblem", "PlanResult", "SolveOptions",
    "InfeasibleErosionError", "transcribe", "solve", "plan", "evaluate_cost",
    # verify
    "McReport", "GapCurve", "mc_tube_containment", "mc_chance_constraint",
    "mc_mean_square_gap", "cost_gap_bound_lipschitz", "cost_gap_bound_smooth",
    "lipschitz_gap_integral", "lipschitz_gap_envelope",
    "lipschitz_closed_form_zero_rate", "lipschitz_closed_form_positive_rate",
    # scenario
    "Scenario", "ScenarioError", "load_scenario", "scenario_hash",
]
