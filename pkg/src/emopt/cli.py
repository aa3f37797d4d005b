"""Command-line front end: ``emopt solve`` and ``emopt check``.

stdout carries the results (the final point and a ``status=... objective=...
iters=...`` line, or check reports); stderr carries diagnostics whose
verbosity follows the ``EMOPT_LOG`` environment variable (a logging level
name, default WARNING).

Exit codes for ``solve``: 0 Converged, 2 MaxIter, 3 NumericalFailure,
4 invalid input. For ``check``: 0 when every problem passes, 1 otherwise,
4 on invalid input.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import oracle
from ._errors import DimensionError, DomainError, OracleBudgetError, ProblemFileError, UnboundedProblemError
from .mm import GemConfig, setup_dual_qp, solve_dual_qp, solve_poly_polytope, solve_qp_inequality
from .natgrad import solve_box_qp_cubic, solve_l1_qp, solve_poly_rect, solve_poly_simplex, solve_unconstrained_qp
from .problem import Box, Polyhedron, Simplex
from .problem_file import load_problem
from .results import SolverConfig, SolveResult, Status

__all__ = ["SOLVERS", "AUTO_SOLVER", "solve_problem", "check_problem", "CheckReport", "main"]

log = logging.getLogger("emopt")

EXIT_INPUT_ERROR = 4

# solver name -> problem kinds it accepts
SOLVERS = {
    "unconstrained_qp": ("qp_unconstrained",),
    "l1_qp": ("qp_l1",),
    "poly_rect": ("poly_rect", "qp_box"),
    "poly_simplex": ("poly_simplex",),
    "poly_polytope": ("poly_polytope",),
    "qp_inequality": ("qp_ineq",),
    "box_qp_cubic": ("qp_box",),
    "dual_qp": ("lp_dual",),
}
AUTO_SOLVER = {
    "qp_unconstrained": "unconstrained_qp",
    "qp_l1": "l1_qp",
    "poly_rect": "poly_rect",
    "poly_simplex": "poly_simplex",
    "poly_polytope": "poly_polytope",
    "qp_ineq": "qp_inequality",
    "qp_box": "box_qp_cubic",
    "lp_dual": "dual_qp",
}
ORACLES = ("auto", "grid", "pgd", "enum", "lp", "kkt")
AUTO_ORACLE = {
    "qp_unconstrained": "pgd",
    "qp_l1": "kkt",
    "poly_rect": "grid",
    "poly_simplex": "grid",
    "poly_polytope": "grid",
    "qp_ineq": "enum",
    "qp_box": "grid",
    "lp_dual": "lp",
}
_INPUT_ERRORS = (ProblemFileError, DimensionError, DomainError, ValueError)


class InputError(Exception):
    """The command line or the problem cannot be acted on."""


# --------------------------------------------------------------------------
# Dispatch
# --------------------------------------------------------------------------


def _random_start(problem, rng):
    """A strictly interior random start for kinds whose domain makes one easy to draw."""
    kind, dim = problem.kind, problem.dim
    if kind in ("qp_unconstrained", "qp_l1"):
        return rng.standard_normal(dim)
    if kind in ("poly_rect", "qp_box"):
        lo, hi = problem.array("l"), problem.array("u")
        return lo + (hi - lo) * rng.uniform(0.1, 0.9, dim)
    if kind == "poly_simplex":
        point = 0.9 * rng.dirichlet(np.ones(dim)) + 0.1 / dim
        return point[:-1]
    return None


def _sigma_option(problem, length):
    sigma = problem.options.get("sigma", "auto")
    if isinstance(sigma, float):
        return np.full(length, sigma)
    return sigma if sigma == "auto" else np.asarray(sigma, dtype=float)


def solve_problem(problem, solver="auto", max_iter=None, tol=None, seed=None, trace_every=1) -> tuple[str, SolveResult]:
    """Run the chosen solver on a validated :class:`ProblemFile`.

    Command-line ``max_iter``/``tol`` override the file's options. ``seed``
    draws a random interior start when the file gives none (box, simplex and
    unconstrained kinds). Returns ``(solver_name, result)``.
    """
    name = AUTO_SOLVER[problem.kind] if solver == "auto" else solver
    if name not in SOLVERS:
        raise InputError(f"unknown solver {name!r}; choose from auto, {', '.join(SOLVERS)}")
    if problem.kind not in SOLVERS[name]:
        raise InputError(f"solver {name} does not handle problems of kind {problem.kind}")
    opts = problem.options
    max_iter = opts.get("max_iter", 10000) if max_iter is None else max_iter
    theta0 = opts.get("theta0")
    if theta0 is None and seed is not None:
        theta0 = _random_start(problem, np.random.default_rng(seed))
    K, delta = opts.get("K"), opts.get("delta")

    settings = dict(max_iter=max_iter, trace_every=trace_every, delta=delta)
    tol = opts.get("tol") if tol is None else tol
    if tol is not None:
        settings["tol"] = tol
    if name in ("poly_polytope", "qp_inequality", "dual_qp"):
        cfg = GemConfig(**settings)
    else:
        cfg = SolverConfig(**settings)

    log.info("solving %s problem with %s", problem.kind, name)
    if name == "unconstrained_qp":
        result = solve_unconstrained_qp(problem.quadratic(), _sigma_option(problem, problem.dim), theta0, cfg)
    elif name == "l1_qp":
        result = solve_l1_qp(problem.quadratic(), _sigma_option(problem, problem.dim), theta0, cfg)
    elif name == "poly_rect":
        poly = problem.polynomial() if problem.kind == "poly_rect" else problem.quadratic().to_polynomial()
        result = solve_poly_rect(poly, problem.array("l"), problem.array("u"), theta0, cfg, K=K)
    elif name == "poly_simplex":
        result = solve_poly_simplex(problem.polynomial(), theta0, cfg, K=K)
    elif name == "box_qp_cubic":
        result = solve_box_qp_cubic(
            problem.quadratic(), problem.array("l"), problem.array("u"), _sigma_option(problem, problem.dim), theta0, cfg
        )
    elif name == "poly_polytope":
        result = solve_poly_polytope(
            problem.polynomial(), problem.array("B"), problem.array("c"), problem.array("l"), problem.array("u"),
            theta0, cfg, K=K,
        )
    elif name == "qp_inequality":
        result = solve_qp_inequality(
            problem.quadratic(), problem.array("A"), problem.array("c"), _sigma_option(problem, problem.dim), theta0, cfg
        )
    else:
        Q = problem.array("Q") if "Q" in problem.data else None
        setup = setup_dual_qp(problem.array("A"), problem.array("b"), problem.array("c"), Q)
        sigma = _sigma_option(problem, len(problem.data["c"])) if Q is not None else "auto"
        result = solve_dual_qp(setup, sigma, theta0, cfg)
    return name, result


# --------------------------------------------------------------------------
# Verification
# --------------------------------------------------------------------------


@dataclass
class CheckReport:
    path: str
    solver: str
    oracle: str
    status: Status
    solver_objective: float
    oracle_objective: float
    gap: float
    kkt: float
    passed: bool
    reason: str

    def lines(self, show_path=False) -> list[str]:
        head = f"{self.path}: " if show_path else ""
        return [
            f"{head}solver={self.solver} status={self.status.value} oracle={self.oracle}",
            f"{head}solver_objective={self.solver_objective:.17g} oracle_objective={self.oracle_objective:.17g} "
            f"gap={self.gap:.3e} kkt={self.kkt:.3e}",
            f"{head}{'PASS' if self.passed else 'FAIL: ' + self.reason}",
        ]


def _constraints(problem):
    """Objective gradient and constraint evaluators ``g(x) <= 0`` in the problem's own coordinates."""
    kind = problem.kind
    if kind in ("poly_rect", "poly_simplex", "poly_polytope"):
        poly = problem.polynomial()
        grad = poly.gradient
    elif kind == "lp_dual":
        b = problem.array("b")
        if "Q" in problem.data:
            return None
        grad = lambda x: -b  # noqa: E731 - maximizing b'x
    else:
        quad = problem.quadratic()
        grad = quad.gradient
    dim = problem.dim
    eye = np.eye(dim)
    if kind in ("qp_unconstrained", "qp_l1"):
        return grad, None, None
    if kind in ("poly_rect", "qp_box"):
        lo, hi = problem.array("l"), problem.array("u")
        return grad, lambda x: np.concatenate([lo - x, x - hi]), lambda x: np.vstack([-eye, eye])
    if kind == "poly_simplex":
        ones = np.ones((1, dim))
        return (
            grad,
            lambda x: np.concatenate([-x, [x.sum() - 1.0, 1.0 - x.sum()]]),
            lambda x: np.vstack([-eye, ones, -ones]),
        )
    if kind == "poly_polytope":
        B, c = problem.array("B"), problem.array("c")
        lo, hi = problem.array("l"), problem.array("u")
        return (
            grad,
            lambda x: np.concatenate([lo - x, x - hi, B @ x - c, c - B @ x]),
            lambda x: np.vstack([-eye, eye, B, -B]),
        )
    A, c = problem.array("A"), problem.array("c")
    return grad, lambda x: A.T @ x - c, lambda x: A.T


def _l1_residual(problem, x):
    """Distance of ``-(Qx + b)`` from the subdifferential of ``||x||_1``."""
    quad = problem.quadratic()
    g = quad.gradient(x)
    zero = np.abs(x) <= 1e-12
    resid = np.where(zero, np.maximum(np.abs(g) - 1.0, 0.0), np.abs(g + np.sign(x)))
    return float(np.linalg.norm(resid))


def _points_per_axis(dim):
    return {1: 2001, 2: 201, 3: 101}.get(dim, 31)


def _polytope_grid(problem, budget):
    """Lattice search over the free coordinates of ``{B x = c, l <= x <= u}``."""
    B, c = problem.array("B"), problem.array("c")
    lo, hi = problem.array("l"), problem.array("u")
    n, p = B.shape
    free = p - n
    B1, B2 = B[:, :free], B[:, free:]
    poly = problem.polynomial()

    def completed(points):
        tail = np.linalg.solve(B2, (c[:, None] - B1 @ points.T)).T
        return np.hstack([points, tail])

    def F(points):
        full = completed(points)
        inside = np.all((full >= lo - 1e-12) & (full <= hi + 1e-12), axis=1)
        vals = np.full(points.shape[0], np.inf)
        vals[inside] = poly(full[inside])
        return vals

    point, value = oracle.grid_search_min(
        F, Box(lo[:free], hi[:free]), _points_per_axis(free), budget=budget, refine=3
    )
    if not np.isfinite(value):
        raise OracleBudgetError("no lattice point lies on the feasible slice; increase the resolution")
    return completed(point[None, :])[0], value


def _run_oracle(problem, name, budget):
    kind = problem.kind
    if name == "kkt":
        return None, float("nan")
    if name == "grid":
        if kind == "poly_polytope":
            return _polytope_grid(problem, budget)
        if kind in ("poly_rect", "qp_box"):
            F = problem.polynomial() if kind == "poly_rect" else problem.quadratic().to_polynomial()
            domain = Box(problem.array("l"), problem.array("u"))
            return oracle.grid_search_min(F, domain, _points_per_axis(problem.dim), budget=budget, refine=3)
        if kind == "poly_simplex":
            resolution = 200 if problem.dim <= 3 else 60
            return oracle.grid_search_min(problem.polynomial(), Simplex(problem.dim), resolution, budget=budget, refine=3)
    if name == "pgd" and kind in ("qp_unconstrained", "qp_box", "qp_ineq"):
        quad = problem.quadratic()
        if kind == "qp_box":
            domain = Box(problem.array("l"), problem.array("u"))
        elif kind == "qp_ineq":
            domain = Polyhedron(problem.array("A"), problem.array("c"))
        else:
            domain = None
        try:
            x = oracle.projected_gradient(quad, domain)
        except NotImplementedError as exc:
            raise InputError(str(exc)) from None
        return x, quad(x)
    if name == "enum" and kind == "qp_ineq":
        quad = problem.quadratic()
        x, _ = oracle.qp_active_set_enum(quad, problem.array("A"), problem.array("c"))
        return x, quad(x)
    if name == "lp" and kind == "lp_dual" and "Q" not in problem.data:
        return oracle.lp_vertex_enum(problem.array("A"), problem.array("c"), problem.array("b"))
    raise InputError(f"oracle {name} does not apply to problems of kind {kind}")


def check_problem(problem, path="", solver="auto", oracle_name="auto", budget=oracle.DEFAULT_BUDGET,
                  gap_tol=1e-3, kkt_tol=1e-4, max_iter=None, tol=None) -> CheckReport:
    """Solve, run an independent oracle and compare.

    A check passes when the solver converged, the objective gap is at most
    ``gap_tol * (1 + |oracle objective|)`` and, for convex kinds, the KKT
    residual at the solver's point is at most ``kkt_tol``.
    """
    name = AUTO_ORACLE[problem.kind] if oracle_name == "auto" else oracle_name
    solver_name, result = solve_problem(problem, solver, max_iter=max_iter, tol=tol)
    _, ref_value = _run_oracle(problem, name, budget)
    x = result.x
    kkt = float("nan")
    if problem.kind == "qp_l1":
        kkt = _l1_residual(problem, x)
    else:
        pieces = _constraints(problem)
        if pieces is not None and np.all(np.isfinite(x)):
            kkt = oracle.kkt_residual(pieces[0], x, pieces[1], pieces[2]).residual
    gap = abs(result.objective - ref_value) if np.isfinite(ref_value) else float("nan")
    convex = problem.kind in ("qp_unconstrained", "qp_l1", "qp_ineq", "lp_dual")
    reasons = []
    if result.status is not Status.CONVERGED:
        reasons.append(f"solver ended with {result.status.value}: {result.message or 'no detail'}")
    if np.isfinite(ref_value) and np.isfinite(result.objective) and not gap <= gap_tol * (1.0 + abs(ref_value)):
        reasons.append(f"objective gap {gap:.3e} exceeds tolerance")
    if (convex or name == "kkt") and not kkt <= kkt_tol:
        reasons.append(f"KKT residual {kkt:.3e} exceeds {kkt_tol:.1e}")
    return CheckReport(
        path=path, solver=solver_name, oracle=name, status=result.status, solver_objective=float(result.objective),
        oracle_objective=float(ref_value), gap=gap, kkt=kkt, passed=not reasons, reason="; ".join(reasons),
    )


# --------------------------------------------------------------------------
# Command line
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT_ERROR, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emopt", description="Majorization solvers for polynomial and quadratic programs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="solve a problem file")
    solve.add_argument("problem", help="path to a JSON problem file")
    solve.add_argument("--solver", default="auto", help=f"auto or one of: {', '.join(SOLVERS)}")
    solve.add_argument("--max-iter", type=_positive_int, default=None)
    solve.add_argument("--tol", type=_positive_float, default=None)
    solve.add_argument("--trace", metavar="CSV", default=None, help="write the iterate trace to this file")
    solve.add_argument("--seed", type=int, default=None, help="draw a random interior start with this seed")

    check = sub.add_parser("check", help="compare solver output with an independent oracle")
    check.add_argument("problems", nargs="+", help="one or more JSON problem files")
    check.add_argument("--solver", default="auto")
    check.add_argument("--oracle", choices=ORACLES, default="auto")
    check.add_argument("--budget", type=_positive_int, default=oracle.DEFAULT_BUDGET, help="largest lattice size")
    check.add_argument("--gap-tol", type=_positive_float, default=1e-3)
    check.add_argument("--kkt-tol", type=_positive_float, default=1e-4)
    check.add_argument("--max-iter", type=_positive_int, default=None)
    check.add_argument("--tol", type=_positive_float, default=None)
    check.add_argument("--jobs", type=_positive_int, default=1, help="check problems in parallel processes")
    return parser


def _format_vector(x):
    return "[" + ", ".join(format(float(v), ".17g") for v in np.atleast_1d(x)) + "]"


def _cmd_solve(args) -> int:
    problem = load_problem(args.problem)
    _, result = solve_problem(problem, args.solver, args.max_iter, args.tol, args.seed)
    if args.trace:
        result.trace.write_csv(args.trace)
    if result.message:
        print(f"emopt: {result.message}", file=sys.stderr)
    print(f"x={_format_vector(result.x)}")
    print(f"status={result.status.value} objective={result.objective:.17g} iters={result.n_iter}")
    return result.status.exit_code


def _check_one(path, args_dict):
    try:
        problem = load_problem(path)
        return check_problem(problem, path=path, **args_dict), None
    except (InputError, OracleBudgetError, UnboundedProblemError, *_INPUT_ERRORS) as exc:
        return None, f"{path}: {exc}"


def _cmd_check(args) -> int:
    options = dict(
        solver=args.solver, oracle_name=args.oracle, budget=args.budget, gap_tol=args.gap_tol,
        kkt_tol=args.kkt_tol, max_iter=args.max_iter, tol=args.tol,
    )
    paths = args.problems
    if args.jobs > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_check_one, paths, [options] * len(paths)))
    else:
        outcomes = [_check_one(path, options) for path in paths]
    code = 0
    for report, error in outcomes:
        if error is not None:
            print(f"emopt: {error}", file=sys.stderr)
            code = max(code, EXIT_INPUT_ERROR)
            continue
        for line in report.lines(show_path=len(paths) > 1):
            print(line)
        if not report.passed:
            code = max(code, 1)
    return code


def _configure_logging():
    level = os.environ.get("EMOPT_LOG", "WARNING").upper()
    numeric = logging.getLevelName(level)
    if not isinstance(numeric, int):
        numeric = logging.WARNING
    logging.basicConfig(level=numeric, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        return _cmd_check(args)
    except (InputError, *_INPUT_ERRORS) as exc:
        print(f"emopt: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except (OracleBudgetError, UnboundedProblemError) as exc:
        print(f"emopt: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
