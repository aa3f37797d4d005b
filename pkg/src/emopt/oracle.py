"""Reference methods used to check the solvers.

Nothing here reuses the solvers' update formulas. Each routine is a
brute-force or textbook method (lattice search, projected gradient,
active-set or vertex enumeration, finite differences, non-negative least
squares), so agreement with a solver is independent evidence.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from ._errors import DimensionError, DomainError, OracleBudgetError, UnboundedProblemError
from .problem import Box, Polyhedron, QuadraticObjective, Simplex, Unconstrained

__all__ = [
    "KktReport",
    "grid_search_min",
    "simplex_lattice",
    "projected_gradient",
    "qp_active_set_enum",
    "lp_vertex_enum",
    "kkt_residual",
    "finite_diff_grad",
    "majorization_probe",
]

DEFAULT_BUDGET = 10**8
ACTIVATION_TOL = 1e-6
_CHUNK = 1 << 18


# --------------------------------------------------------------------------
# Lattice search
# --------------------------------------------------------------------------


def simplex_lattice(dim: int, resolution: int) -> np.ndarray:
    """All points ``x / resolution`` with ``x`` a non-negative integer vector summing to ``resolution``."""
    if dim < 1 or resolution < 1:
        raise ValueError("dim and resolution must be positive")
    # Stars and bars: choose dim-1 bar positions among resolution+dim-1 slots.
    bars = np.array(list(itertools.combinations(range(resolution + dim - 1), dim - 1)), dtype=int)
    bars = bars.reshape(math.comb(resolution + dim - 1, dim - 1), dim - 1)
    edges = np.hstack([np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), resolution + dim - 1)])
    counts = np.diff(edges, axis=1) - 1
    return counts / resolution


def _lattice_size(domain, points_per_axis) -> int:
    if isinstance(domain, Simplex):
        return math.comb(points_per_axis + domain.dim - 1, domain.dim - 1)
    return points_per_axis**domain.dim


def _chunked_argmin(F, points):
    best_val, best_pt = np.inf, None
    for start in range(0, points.shape[0], _CHUNK):
        block = points[start : start + _CHUNK]
        vals = np.asarray(F(block), dtype=float)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_pt = float(vals[k]), block[k].copy()
    return best_pt, best_val


def _box_points(lower, upper, n):
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def grid_search_min(F, domain, points_per_axis: int, budget: int = DEFAULT_BUDGET, refine: int = 0):
    """Exhaustive lattice minimum of a vectorized evaluator.

    ``F`` maps an ``(N, p)`` array of points to ``N`` values. ``domain`` is a
    :class:`Box` (``points_per_axis`` equispaced values per coordinate) or a
    :class:`Simplex` (the lattice ``{x / m : sum(x) = m}`` with
    ``m = points_per_axis``). ``refine`` extra rounds re-grid a small
    neighbourhood of the incumbent, each ten times finer than the last,
    which sharpens interior minima without changing the global search.
    Returns ``(point, value)``.
    """
    if points_per_axis < 2:
        raise ValueError("points_per_axis must be at least 2")
    size = _lattice_size(domain, points_per_axis)
    if size > budget:
        raise OracleBudgetError(f"lattice has {size} points, budget is {budget}")
    if isinstance(domain, Box):
        best, val = _chunked_argmin(F, _box_points(domain.lower, domain.upper, points_per_axis))
        width = (domain.upper - domain.lower) / (points_per_axis - 1)
        for _ in range(refine):
            lo = np.maximum(best - 2 * width, domain.lower)
            hi = np.minimum(best + 2 * width, domain.upper)
            cand, cval = _chunked_argmin(F, _box_points(lo, hi, 21))
            if cval < val:
                best, val = cand, cval
            width = width / 10
        return best, val
    if isinstance(domain, Simplex):
        best, val = _chunked_argmin(F, simplex_lattice(domain.dim, points_per_axis))
        width = 1.0 / points_per_axis
        for _ in range(refine):
            head = best[:-1]
            lo = np.maximum(head - 2 * width, 0.0)
            hi = np.minimum(head + 2 * width, 1.0)
            pts = _box_points(lo, hi, 21)
            pts = pts[pts.sum(axis=1) <= 1.0]
            pts = np.hstack([pts, np.maximum(1.0 - pts.sum(axis=1, keepdims=True), 0.0)])
            cand, cval = _chunked_argmin(F, pts)
            if cval < val:
                best, val = cand, cval
            width = width / 10
        return best, val
    raise DomainError("grid_search_min supports Box and Simplex domains")


# --------------------------------------------------------------------------
# Projected gradient
# --------------------------------------------------------------------------


def _projector(domain, dim):
    if domain is None or isinstance(domain, Unconstrained):
        return lambda z: z
    if isinstance(domain, Box):
        return lambda z: np.clip(z, domain.lower, domain.upper)
    if isinstance(domain, Polyhedron):
        if domain.A.shape[1] != 1:
            raise NotImplementedError("projection is implemented for boxes and single halfspaces only")
        a = domain.A[:, 0]
        c = float(domain.c[0])
        aa = float(a @ a)

        def halfspace(z):
            excess = float(a @ z) - c
            return z - (excess / aa) * a if excess > 0 else z

        return halfspace
    raise NotImplementedError(f"no projection for {type(domain).__name__}")


def projected_gradient(obj: QuadraticObjective, domain=None, theta0=None, step=None, tol=1e-12, max_iter=1_000_000):
    """Minimize ``0.5 x'Qx + b'x`` over a box or a halfspace by projected gradient.

    The default step is ``1 / lambda_max(Q)``. Stops once the fixed-point
    residual ``||x - P(x - step * grad)||`` is at most ``tol`` and raises
    :class:`RuntimeError` if ``max_iter`` passes first.
    """
    Q, b = obj.Q, obj.b
    project = _projector(domain, Q.shape[0])
    if step is None:
        top = float(np.max(np.linalg.eigvalsh(Q)))
        if top <= 0:
            raise DomainError("projected_gradient needs a non-zero convex Q")
        step = 1.0 / top
    x = project(np.zeros(Q.shape[0]) if theta0 is None else np.asarray(theta0, dtype=float))
    for _ in range(max_iter):
        nxt = project(x - step * (Q @ x + b))
        if np.linalg.norm(nxt - x) <= tol:
            return nxt
        x = nxt
    raise RuntimeError("projected gradient did not reach the requested residual")


# --------------------------------------------------------------------------
# Enumeration oracles
# --------------------------------------------------------------------------


def qp_active_set_enum(obj: QuadraticObjective, A, c, tol=1e-9, budget=10**6):
    """Exact minimizer of a strictly convex QP over ``{A' x <= c}`` by active-set enumeration.

    Every subset of at most ``dim`` constraints is treated as the active set:
    the equality-constrained KKT system is solved, and the candidate is kept
    when it is primal feasible and its multipliers are non-negative (up to
    ``tol``). For strictly convex ``Q`` exactly one active set qualifies
    (up to degeneracy); the lowest objective among the survivors is returned
    as ``(x, multipliers)``.
    """
    Q, b = obj.Q, obj.b
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    p, m = A.shape
    if Q.shape != (p, p) or c.shape != (m,):
        raise DimensionError("qp_active_set_enum: inconsistent shapes")
    count = sum(math.comb(m, k) for k in range(min(p, m) + 1))
    if count > budget:
        raise OracleBudgetError(f"{count} active sets exceed the budget {budget}")
    best = None
    for k in range(min(p, m) + 1):
        for active in itertools.combinations(range(m), k):
            idx = list(active)
            As = A[:, idx]
            kkt = np.block([[Q, As], [As.T, np.zeros((k, k))]])
            rhs = np.concatenate([-b, c[idx]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x, nu = sol[:p], sol[p:]
            if np.any(nu < -tol) or np.any(A.T @ x - c > tol * (1.0 + np.abs(c))):
                continue
            val = obj(x)
            if best is None or val < best[0] - 1e-14:
                full = np.zeros(m)
                full[idx] = np.maximum(nu, 0.0)
                best = (val, x, full)
    if best is None:
        raise DomainError("no feasible KKT point found; the instance may be infeasible")
    return best[1], best[2]


def lp_vertex_enum(A, c, objective, tol=1e-9):
    """Maximize ``objective' x`` over ``{A' x <= c}`` by enumerating vertices.

    ``A`` has one constraint per column. Every ``dim x dim`` subsystem is
    solved; singular or infeasible ones are skipped. Boundedness is checked
    first: the maximum is finite exactly when ``objective`` lies in the cone
    spanned by the columns of ``A`` (tested by non-negative least squares).
    Returns ``(x, value)``.
    """
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    obj = np.asarray(objective, dtype=float)
    n, m = A.shape
    if c.shape != (m,) or obj.shape != (n,):
        raise DimensionError("lp_vertex_enum: inconsistent shapes")
    _, resid = nnls(A, obj)
    if resid > 1e-9 * (1.0 + np.linalg.norm(obj)):
        raise UnboundedProblemError("objective is not in the cone of the constraint normals")
    best = None
    for rows in itertools.combinations(range(m), n):
        sub = A[:, rows].T
        if abs(np.linalg.det(sub)) <= 1e-12:
            continue
        x = np.linalg.solve(sub, c[list(rows)])
        if np.any(A.T @ x - c > tol * (1.0 + np.abs(c))):
            continue
        val = float(obj @ x)
        if best is None or val > best[1]:
            best = (x, val)
    if best is None:
        raise DomainError("no feasible vertex; the instance is infeasible or has no vertices")
    return best


# --------------------------------------------------------------------------
# First-order checks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KktReport:
    """First-order residuals at a point for constraints ``g(theta) <= 0``."""

    stationarity: float
    primal_violation: float
    complementarity: float
    multipliers: np.ndarray
    active: np.ndarray

    @property
    def residual(self) -> float:
        return max(self.stationarity, self.primal_violation, self.complementarity)


def kkt_residual(f_grad, theta, g=None, g_grad=None, activation_tol=ACTIVATION_TOL) -> KktReport:
    """Fit multipliers on the nearly active constraints and report residuals.

    ``f_grad(theta)`` is the objective gradient. ``g(theta)`` returns the
    constraint values and ``g_grad(theta)`` their gradients, one row per
    constraint. Constraints with ``g >= -activation_tol`` enter
    ``min_{nu >= 0} ||grad f + sum nu_i grad g_i||``, solved by
    non-negative least squares; the rest get zero multipliers.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(f_grad(theta), dtype=float)
    if g is None:
        return KktReport(float(np.linalg.norm(grad)), 0.0, 0.0, np.zeros(0), np.zeros(0, dtype=bool))
    vals = np.atleast_1d(np.asarray(g(theta), dtype=float))
    jac = np.atleast_2d(np.asarray(g_grad(theta), dtype=float))
    if jac.shape != (vals.shape[0], theta.shape[0]):
        raise DimensionError("g_grad must return one row per constraint")
    active = vals >= -activation_tol
    nu = np.zeros(vals.shape[0])
    if np.any(active):
        nu[active], stat = nnls(jac[active].T, -grad)
    else:
        stat = float(np.linalg.norm(grad))
    primal = float(np.max(np.maximum(vals, 0.0), initial=0.0))
    comp = float(np.max(np.abs(nu * vals), initial=0.0))
    return KktReport(float(stat), primal, comp, nu, active)


def finite_diff_grad(f, theta, h=None) -> np.ndarray:
    """Central-difference gradient with per-coordinate step ``h_j = 1e-5 (1 + |theta_j|)``."""
    theta = np.asarray(theta, dtype=float)
    steps = 1e-5 * (1.0 + np.abs(theta)) if h is None else np.broadcast_to(np.asarray(h, dtype=float), theta.shape)
    grad = np.empty_like(theta)
    for j in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[j] = steps[j]
        hi, lo = f(theta + e), f(theta - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise DomainError(f"probe point outside the domain along coordinate {j}")
        grad[j] = (hi - lo) / (2.0 * steps[j])
    return grad


def majorization_probe(u, f, sampler, trials: int, seed=0):
    """Audit a surrogate on sampled interior pairs.

    ``sampler(rng)`` returns a pair ``(theta, theta_bar)``. Returns
    ``(min_gap, max_anchor_gap)`` where ``min_gap`` is the smallest
    ``u(theta | theta_bar) - f(theta)`` and ``max_anchor_gap`` the largest
    ``|u(theta_bar | theta_bar) - f(theta_bar)|``.
    """
    rng = np.random.default_rng(seed)
    min_gap, anchor_gap = np.inf, 0.0
    for _ in range(trials):
        theta, anchor = sampler(rng)
        min_gap = min(min_gap, float(u(theta, anchor) - f(theta)))
        anchor_gap = max(anchor_gap, abs(float(u(anchor, anchor) - f(anchor))))
    return min_gap, anchor_gap
