"""Contraction-rate estimation: log norms, Lyapunov certificates, bisection.

For a linear closed loop A_cl, the optimal weighted contraction rate equals
the spectral abscissa alpha(A_cl); feasibility of the Lyapunov LMI
A^T P + P A <= 2 c P with P > 0 is equivalent to alpha(A) < c, so the LMI is
decided by an eigenvalue test plus a dense Lyapunov solve (no SDP solver).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .dynamics import ClosedLoopSpec, SystemModel

__all__ = [
    "ContractionEstimate",
    "matrix_measure_l2",
    "spectral_abscissa",
    "lyapunov_feasible",
    "optimal_contraction_rate",
    "sampled_contraction_rate",
]


@dataclass(frozen=True)
class ContractionEstimate:
    rate: float
    method: str  # l2_measure | lmi_bisection | sampled | given
    witness: Optional[np.ndarray] = None
    domain: Optional[dict] = None
    samples: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def witness_condition_number(self) -> Optional[float]:
        if self.witness is None:
            return None
        return float(np.linalg.cond(self.witness))


def matrix_measure_l2(jac) -> float:
    """l2 log norm: largest eigenvalue of the symmetric part."""
    jac = np.asarray(jac, dtype=float)
    if jac.ndim != 2 or jac.shape[0] != jac.shape[1]:
        raise ValueError("matrix must be square")
    sym = 0.5 * (jac + jac.T)
    return float(np.linalg.eigvalsh(sym)[-1])


def spectral_abscissa(mat) -> float:
    mat = np.asarray(mat, dtype=float)
    return float(np.max(np.linalg.eigvals(mat).real))


def lyapunov_feasible(a_cl, c: float) -> tuple[bool, Optional[np.ndarray]]:
    """Decide existence of P > 0 with A^T P + P A <= 2 c P; return a witness.

    Feasible iff the spectral abscissa of A is below c; the witness solves
    (A - cI)^T P + P (A - cI) = -I. A singular shifted Lyapunov system is
    reported as infeasible-at-boundary.
    """
    a_cl = np.asarray(a_cl, dtype=float)
    if a_cl.ndim != 2 or a_cl.shape[0] != a_cl.shape[1]:
        raise ValueError("matrix must be square")
    if spectral_abscissa(a_cl) >= c:
        return False, None
    shifted = a_cl - c * np.eye(a_cl.shape[0])
    try:
        # solve_continuous_lyapunov solves M X + X M^T = Q
        p = linalg.solve_continuous_lyapunov(shifted.T, -np.eye(a_cl.shape[0]))
    except linalg.LinAlgError:
        return False, None
    p = 0.5 * (p + p.T)
    if np.linalg.eigvalsh(p)[0] <= 0:
        return False, None
    return True, p


def optimal_contraction_rate(a_cl, tol: float = 1e-6) -> ContractionEstimate:
    """Bisection over c for the Lyapunov LMI; converges to the spectral abscissa."""
    a_cl = np.asarray(a_cl, dtype=float)
    if tol <= 0:
        raise ValueError("tol must be positive")
    hi = matrix_measure_l2(a_cl) + 1.0  # log norm dominates the abscissa
    lo = hi - 2.0
    gap = 2.0
    while lyapunov_feasible(a_cl, lo)[0]:
        hi = lo
        gap *= 2.0
        lo -= gap
    while hi - lo > tol:
        mid = 0.5 * (hi + lo)
        if lyapunov_feasible(a_cl, mid)[0]:
            hi = mid
        else:
            lo = mid
    feasible, witness = lyapunov_feasible(a_cl, hi)
    assert feasible
    return ContractionEstimate(rate=float(hi), method="lmi_bisection", witness=witness,
                               notes={"tol": tol})


def _box_grid(boxes: dict, density: int):
    """Cartesian grid over named boxes; each box is a list of (lo, hi) per axis."""
    axes = []
    layout = []
    for name, box in boxes.items():
        box = np.asarray(box, dtype=float)
        if box.ndim == 1:
            box = box[None, :]
        for i, (lo, hi) in enumerate(box):
            axes.append(np.linspace(lo, hi, density) if hi > lo else np.array([lo]))
            layout.append((name, i))
    for combo in itertools.product(*axes):
        point = {}
        for (name, i), value in zip(layout, combo):
            point.setdefault(name, []).append(value)
        yield {k: np.asarray(v) for k, v in point.items()}


def sampled_contraction_rate(spec, boxes: dict, grid_density: int = 3,
                             t: float = 0.0) -> ContractionEstimate:
    """Max l2 log norm of the state Jacobian over a grid on an operating box.

    For a ClosedLoopSpec, `boxes` may name 'state', 'ref' and 'uff' ranges;
    for a plain SystemModel, 'state' and 'control'. A conservative upper
    estimate valid only on the declared domain.
    """
    if grid_density < 2:
        raise ValueError("grid_density must be >= 2")
    best = -np.inf
    count = 0
    if isinstance(spec, ClosedLoopSpec):
        n, p = spec.state_dim, spec.base.control_dim
        for point in _box_grid(boxes, grid_density):
            x = point.get("state", np.zeros(n))
            x_ref = point.get("ref", np.zeros(n))
            u_ff = point.get("uff", np.zeros(p))
            jac = spec.closed_loop_jacobian(x, x_ref, u_ff, t)
            best = max(best, matrix_measure_l2(jac))
            count += 1
    elif isinstance(spec, SystemModel):
        n, p = spec.state_dim, spec.control_dim
        for point in _box_grid(boxes, grid_density):
            x = point.get("state", np.zeros(n))
            u = point.get("control", np.zeros(p))
            jac = spec.state_jacobian(x, u, t)
            best = max(best, matrix_measure_l2(jac))
            count += 1
    else:
        raise TypeError("expected ClosedLoopSpec or SystemModel")
    if count == 0:
        raise ValueError("empty sampling domain")
    return ContractionEstimate(
        rate=float(best), method="sampled", samples=count,
        domain={k: np.asarray(v, dtype=float).tolist() for k, v in boxes.items()},
        notes={"grid_density": grid_density},
    )
