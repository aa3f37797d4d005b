"""Solver configuration, iterate traces and results."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import nnls

__all__ = ["Status", "SolverConfig", "IterateTrace", "SolveResult", "TRACE_COLUMNS", "kkt_certificate", "fitted_kkt_certificate"]

TRACE_COLUMNS = (
    "iter",
    "objective_original",
    "objective_transformed",
    "step_norm",
    "grad_norm",
    "kkt_residual",
    "interior_margin",
)


class Status(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"

    @property
    def exit_code(self) -> int:
        return {"Converged": 0, "MaxIter": 2, "NumericalFailure": 3}[self.value]


@dataclass
class SolverConfig:
    """Outer-loop settings shared by the closed-form update solvers.

    ``tol`` stops the loop once a proposed step has norm at most
    ``tol * (1 + ||theta||)``. ``delta`` is the slack added to K bounds (None
    selects the scale-aware default) and ``shrink`` is the safety factor of
    the automatic diagonal step sizes.
    """

    max_iter: int = 10000
    tol: float = 1e-8
    trace_every: int = 1
    delta: Optional[float] = None
    shrink: float = 0.9

    def __post_init__(self):
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")


class IterateTrace:
    """Per-iteration records; row ``t`` describes the iterate after update ``t``."""

    def __init__(self, every: int = 1):
        self.every = every
        self._rows: list[tuple] = []

    def record(self, it, obj_original, obj_transformed, step_norm, grad_norm, kkt, margin, force=False):
        if force or it % self.every == 0:
            if self._rows and self._rows[-1][0] == it:
                return
            self._rows.append(
                (
                    int(it),
                    float(obj_original),
                    float(obj_transformed),
                    float(step_norm),
                    float(grad_norm),
                    float(kkt),
                    float(margin),
                )
            )

    def __len__(self):
        return len(self._rows)

    def column(self, name) -> np.ndarray:
        idx = TRACE_COLUMNS.index(name)
        dtype = int if name == "iter" else float
        return np.array([row[idx] for row in self._rows], dtype=dtype)

    @property
    def rows(self) -> list[tuple]:
        return list(self._rows)

    def write_csv(self, path_or_file):
        """Write the trace with a fixed header, LF endings and 17 significant digits."""

        def emit(handle):
            writer = csv.writer(handle, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
            writer.writerow(TRACE_COLUMNS)
            for row in self._rows:
                writer.writerow([str(row[0])] + [format(v, ".17g") for v in row[1:]])

        if hasattr(path_or_file, "write"):
            emit(path_or_file)
        else:
            with open(path_or_file, "w", newline="", encoding="utf-8") as handle:
                emit(handle)


@dataclass
class SolveResult:
    """Outcome of a solve.

    ``x`` is the final point in the problem's own coordinates and ``theta`` the
    solver's internal variables (unit-box, reduced-simplex or free polytope
    coordinates). ``objective`` is the original objective at ``x``; for the
    dual route it is the dual objective being maximized.
    """

    x: np.ndarray
    theta: np.ndarray
    objective: float
    status: Status
    n_iter: int
    trace: IterateTrace
    initial_objective: float
    initial_transformed: float
    kkt_residual: float = float("nan")
    message: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


def kkt_certificate(grad_f, constraint_grads, constraint_values, multipliers) -> float:
    """Largest violation of the first-order conditions for ``g(theta) <= 0``.

    ``constraint_grads`` has one row per constraint. Combines stationarity of
    the Lagrangian, primal and dual feasibility and complementary slackness.
    """
    grad_f = np.asarray(grad_f, dtype=float)
    if constraint_grads is None or len(constraint_values) == 0:
        return float(np.linalg.norm(grad_f))
    nu = np.asarray(multipliers, dtype=float)
    g = np.asarray(constraint_values, dtype=float)
    nu_plus = np.maximum(nu, 0.0)
    stationarity = np.linalg.norm(grad_f + np.asarray(constraint_grads).T @ nu_plus)
    dual = np.max(np.maximum(-nu, 0.0), initial=0.0)
    primal = np.max(np.maximum(g, 0.0), initial=0.0)
    comp = np.max(np.abs(nu_plus * g), initial=0.0)
    return float(max(stationarity, dual, primal, comp))


def fitted_kkt_certificate(grad_f, constraint_grads, constraint_values, active_tol=1e-6) -> float:
    """First-order residual with multipliers fitted on the nearly active constraints.

    Multipliers are the non-negative least-squares solution of
    ``sum_j nu_j grad g_j = -grad f`` over constraints with
    ``g_j >= -active_tol``. Used when ratio-based estimates lose precision
    at the edge of the representable interior.
    """
    grad_f = np.asarray(grad_f, dtype=float)
    g = np.asarray(constraint_values, dtype=float)
    active = g >= -active_tol
    if not np.any(active):
        return float(np.linalg.norm(grad_f))
    jac = np.asarray(constraint_grads, dtype=float)[active]
    nu, _ = nnls(jac.T, -grad_f)
    return kkt_certificate(grad_f, jac, g[active], nu)
