"""Exponential-family majorization solvers for polynomial and quadratic programs."""

from .problem import (
    AffineMap,
    Box,
    MonomialTerm,
    Polyhedron,
    PolynomialObjective,
    Polytope,
    QuadraticObjective,
    RebasedProblem,
    Simplex,
    Unconstrained,
)
from .results import IterateTrace, SolveResult, SolverConfig, Status
from .natgrad import (
    solve_box_qp_cubic,
    solve_l1_qp,
    solve_poly_rect,
    solve_poly_simplex,
    solve_unconstrained_qp,
)
from .mm import (
    DualQpSetup,
    GemConfig,
    setup_dual_qp,
    solve_dual_qp,
    solve_poly_polytope,
    solve_qp_inequality,
)

__version__ = "0.1.0"

__all__ = [
    "AffineMap",
    "Box",
    "DualQpSetup",
    "GemConfig",
    "IterateTrace",
    "MonomialTerm",
    "Polyhedron",
    "PolynomialObjective",
    "Polytope",
    "QuadraticObjective",
    "RebasedProblem",
    "Simplex",
    "SolveResult",
    "SolverConfig",
    "Status",
    "Unconstrained",
    "setup_dual_qp",
    "solve_box_qp_cubic",
    "solve_dual_qp",
    "solve_l1_qp",
    "solve_poly_polytope",
    "solve_poly_rect",
    "solve_poly_simplex",
    "solve_qp_inequality",
    "solve_unconstrained_qp",
]
