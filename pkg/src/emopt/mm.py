"""Majorization solvers whose M-step needs an inner Newton solve.

Covers polynomials on polytopes, quadratics under linear inequalities
(including the box special case handled in closed form elsewhere) and the
scaled dual of a QP or LP. The M-step minimizes a convex surrogate with a
damped Newton method that halves the step until the point is strictly
feasible and the merit value has not increased.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from ._errors import BacktrackingError, BoundViolationError, DimensionError, DomainError
from ._validation import as_matrix, as_vector
from .families import (
    DualPoissonFamily,
    PoissonNormalFamily,
    ShiftedBinomialFamily,
    expectation_q_binomial,
)
from .natgrad import _resolve_sigma
from .numerics import cholesky_factor, smw_apply
from .problem import PolynomialObjective, QuadraticObjective, polytope_affine_map, rebase_to_unit_box
from .results import IterateTrace, SolveResult, Status, fitted_kkt_certificate, kkt_certificate

__all__ = [
    "GemConfig",
    "MStepState",
    "DualQpSetup",
    "SurrogateModel",
    "expectation_q_binomial",
    "em_gradient_step",
    "minimize_surrogate",
    "solve_poly_polytope",
    "solve_qp_inequality",
    "setup_dual_qp",
    "solve_dual_qp",
    "interior_point",
    "mstep_state",
]

log = logging.getLogger(__name__)

_RECOVERABLE = (BoundViolationError, BacktrackingError, FloatingPointError, np.linalg.LinAlgError)

# A run whose steps stay below _STALL_STEP (relative) for _STALL_COUNT
# consecutive iterations has hit the precision limit of the interior.
_STALL_STEP = 1e-10
_STALL_COUNT = 20
# Slacks within this multiple of the floor may be pinned by the inner solve.
_WALL_FACTOR = 4.0
# Relative rounding allowance in the descent test; true decreases below it are invisible.
_ROUNDING = 1e-14


@dataclass
class GemConfig:
    """Settings for the Newton-based M-step and the outer loop.

    With ``gem_mode`` the M-step is a single accepted damped Newton step
    judged against the original objective; otherwise the surrogate is
    minimized until the Newton step falls below ``inner_tol``. The outer loop
    stops when the first-order certificate drops below ``tol``.
    """

    beta: float = 0.5
    max_backtracks: int = 60
    inner_tol: float = 1e-10
    max_inner: int = 100
    gem_mode: bool = False
    max_iter: int = 10000
    tol: float = 1e-8
    trace_every: int = 1
    shrink: float = 0.9
    delta: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.max_backtracks < 0 or self.max_inner < 1 or self.max_iter < 0:
            raise ValueError("iteration budgets must be non-negative")


@dataclass(frozen=True)
class MStepState:
    """Anchor-dependent constants of the inequality-QP M-step.

    ``mu`` holds the constraint slacks at the anchor and
    ``nu = b - (sigma^{-1} - Q) theta_bar`` the linear coefficient.
    """

    mu: np.ndarray
    nu: np.ndarray


@dataclass(frozen=True)
class DualQpSetup:
    """Scaled data for the dual route.

    ``xi`` is the minimum-norm solution of ``A xi = b``, ``scale`` is
    ``max(max(xi), 0) + 1``, and the hatted fields are divided by it.
    """

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    Q: Optional[np.ndarray]
    xi: np.ndarray
    scale: float
    xi_hat: np.ndarray
    Q_hat: Optional[np.ndarray]


class SurrogateModel:
    """Value, gradient and Newton direction of a convex M-step objective.

    ``walls(theta)`` optionally returns ``(N, s)``: the slacks ``s`` that
    must stay at least ``floor`` and their rates of change, so that moving
    to ``theta - d`` changes the slacks by ``-N d`` to first order. With
    walls present the Hessian must be available as well.
    """

    def __init__(
        self,
        value: Callable,
        gradient: Callable,
        hessian: Callable = None,
        direction: Callable = None,
        walls: Callable = None,
        floor: float = 0.0,
    ):
        if hessian is None and direction is None:
            raise ValueError("need a Hessian or a direction rule")
        if walls is not None and hessian is None:
            raise ValueError("walls need the Hessian for the projected step")
        self.value = value
        self.gradient = gradient
        self.hessian = hessian
        self._direction = direction
        self.walls = walls
        self.floor = floor

    def newton_direction(self, theta):
        if self._direction is not None:
            return self._direction(theta)
        # Near the boundary the Hessian is badly scaled but still positive
        # definite, so only an outright factorization failure is an error.
        return cholesky_factor(self.hessian(theta), pivot_tol=0.0).solve(self.gradient(theta))

    def step_direction(self, theta):
        """Newton direction with slacks already at the floor held fixed.

        A slack within ``_WALL_FACTOR * floor`` that the plain Newton step
        would shrink is pinned: the step is recomputed in the null space of
        the pinned rows. This keeps the other coordinates moving once a
        constraint that is active at the solution reaches the floor.
        Returns ``(direction, pinned)`` where ``pinned`` is a boolean mask
        over the slacks (None without walls).
        """
        direction = self.newton_direction(theta)
        if self.walls is None:
            return direction, None
        N, s = self.walls(theta)
        near = s <= _WALL_FACTOR * self.floor
        pinned = np.zeros(s.shape, dtype=bool)
        if not np.any(near):
            return direction, pinned
        hess = grad = None
        for _ in range(s.size):
            fresh = near & ~pinned & (N @ direction > 0)
            if not np.any(fresh):
                break
            pinned |= fresh
            basis = null_space(N[pinned])
            if basis.shape[1] == 0:
                return np.zeros_like(direction), pinned
            if hess is None:
                hess, grad = self.hessian(theta), self.gradient(theta)
            reduced = basis.T @ hess @ basis
            direction = basis @ cholesky_factor(0.5 * (reduced + reduced.T), pivot_tol=0.0).solve(basis.T @ grad)
        return direction, pinned

    def admits(self, candidate, pinned):
        """Whether ``candidate`` keeps every slack above the floor.

        Pinned slacks only move by rounding, so they get half the floor as
        headroom.
        """
        _, s = self.walls(candidate)
        low = np.where(pinned, 0.5 * self.floor, self.floor)
        return bool(np.all(s >= low))


def em_gradient_step(surrogate: SurrogateModel, theta, feasible, objective, gem: GemConfig, f_bar=None, direction=None):
    """One damped Newton step ``theta - alpha * d`` on the surrogate.

    ``d`` is the Newton direction of the surrogate, with slacks at the floor
    held fixed when the surrogate declares walls. ``alpha`` starts at one and
    is multiplied by ``gem.beta`` until the point is strictly feasible and
    ``objective`` has not increased over ``f_bar`` (defaulting to
    ``objective(theta)``) beyond a relative rounding allowance of 1e-14.
    Returns ``(theta_hat, alpha)``; raises :class:`BacktrackingError` when
    the budget runs out.
    """
    theta = np.asarray(theta, dtype=float)
    if f_bar is None:
        f_bar = objective(theta)
    if direction is None:
        direction, pinned = surrogate.step_direction(theta)
    else:
        direction, pinned = direction
    if pinned is None:
        inside = feasible
    else:
        def inside(point):
            return surrogate.admits(point, pinned)

    alpha = 1.0
    for _ in range(gem.max_backtracks + 1):
        candidate = theta - alpha * direction
        if inside(candidate):
            try:
                value = objective(candidate)
            except (BoundViolationError, FloatingPointError):
                value = np.inf
            if value <= f_bar + _ROUNDING * (1.0 + abs(f_bar)):
                return candidate, alpha
        alpha *= gem.beta
    raise BacktrackingError("no feasible descent point along the Newton direction")


def minimize_surrogate(surrogate: SurrogateModel, start, feasible, gem: GemConfig):
    """Damped Newton iterations on the surrogate until the step is below ``inner_tol``."""
    theta = np.asarray(start, dtype=float)
    f_bar = surrogate.value(theta)
    for sweep in range(gem.max_inner):
        direction = surrogate.step_direction(theta)
        # The first step is always taken: near the solution the whole M-step
        # is below inner_tol, and stopping there would freeze the outer loop.
        if sweep > 0 and np.linalg.norm(direction[0]) <= gem.inner_tol * (1.0 + np.linalg.norm(theta)):
            break
        try:
            theta, _ = em_gradient_step(surrogate, theta, feasible, surrogate.value, gem, f_bar, direction)
        except BacktrackingError:
            # Rounding floor reached: no representable point improves further.
            break
        f_bar = surrogate.value(theta)
    return theta


def interior_point(G, h):
    """A well-centred point with ``G z < h`` strictly.

    First the smallest slack ``t`` is maximized (capped at one); then, among
    points keeping every slack at least ``t / 2``, the one with the smallest
    l1 norm is returned. The second stage keeps the start near the origin
    when the feasible set is unbounded instead of at an arbitrary far vertex.
    """
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    m, n = G.shape
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    res = linprog(
        cost,
        A_ub=np.hstack([G, np.ones((m, 1))]),
        b_ub=h,
        bounds=[(None, None)] * n + [(None, 1.0)],
        method="highs",
    )
    if res.status != 0 or res.x[-1] <= 0:
        raise DomainError("the feasible set has no strictly interior point")
    margin = 0.5 * res.x[-1]
    # z = zp - zn with zp, zn >= 0; minimize sum(zp + zn).
    res2 = linprog(
        np.ones(2 * n),
        A_ub=np.hstack([G, -G]),
        b_ub=h - margin,
        bounds=[(0, None)] * (2 * n),
        method="highs",
    )
    if res2.status != 0:
        return res.x[:n]
    return res2.x[:n] - res2.x[n:]


def _mm_loop(mstep, report, theta0, gem, to_original, extras_fn=None):
    """Outer majorization loop shared by the Newton-based solvers.

    ``mstep(anchor)`` returns the next iterate; ``report(theta, previous)``
    returns ``(f_original, f_transformed, grad_norm, kkt, margin)``.
    """
    trace = IterateTrace(gem.trace_every)
    theta = np.array(theta0, dtype=float)
    f0, t0, _, kkt, _ = report(theta, None)
    status, message, n_iter = Status.MAX_ITER, "", 0
    current = (f0, t0, kkt)
    last_row = None
    stalled = 0
    for it in range(1, gem.max_iter + 1):
        try:
            new = mstep(theta)
            if not np.all(np.isfinite(new)):
                raise FloatingPointError("M-step produced a non-finite point")
            f_orig, f_tr, gnorm, kkt, margin = report(new, theta)
        except _RECOVERABLE as exc:
            status, message = Status.NUMERICAL_FAILURE, str(exc)
            break
        if not margin > 0:
            status, message = Status.NUMERICAL_FAILURE, "iterate left the interior of the feasible set"
            break
        step = float(np.linalg.norm(new - theta))
        theta, n_iter = new, it
        current = (f_orig, f_tr, kkt)
        last_row = (it, f_orig, f_tr, step, gnorm, kkt, margin)
        trace.record(*last_row)
        log.debug("iter %d objective %.17g step %.3e kkt %.3e", it, f_orig, step, kkt)
        if kkt <= gem.tol:
            status = Status.CONVERGED
            break
        stalled = stalled + 1 if step <= _STALL_STEP * (1.0 + np.linalg.norm(theta)) else 0
        if stalled >= _STALL_COUNT:
            status = Status.NUMERICAL_FAILURE
            message = f"iterates stalled at the edge of the interior with KKT residual {kkt:.3e}"
            break
    if last_row is not None:
        trace.record(*last_row, force=True)
    if status is Status.NUMERICAL_FAILURE:
        log.warning("numerical failure after %d iterations: %s", n_iter, message)
    result = SolveResult(
        x=to_original(theta), theta=theta, objective=current[0], status=status, n_iter=n_iter, trace=trace,
        initial_objective=f0, initial_transformed=t0, kkt_residual=current[2], message=message,
    )
    if extras_fn is not None:
        result.extras.update(extras_fn(theta))
    return result


def _margin_floor(c):
    return 1e-12 * (1.0 + float(np.max(np.abs(c), initial=0.0)))


def _inner_solver(gem, objective, feasible):
    """Return ``step(model, anchor)`` implementing the configured M-step."""

    def step(model, anchor):
        if gem.gem_mode:
            new, _ = em_gradient_step(model, anchor, feasible, objective, gem)
            return new
        return minimize_surrogate(model, anchor, feasible, gem)

    return step


# --------------------------------------------------------------------------
# Polynomial over a polytope
# --------------------------------------------------------------------------


def solve_poly_polytope(
    poly: PolynomialObjective, B, c, lower, upper, theta0=None, gem=None, K=None, use_smw="auto"
) -> SolveResult:
    """Minimize a polynomial over ``{B lam = c, lower <= lam <= upper}``.

    The last ``len(c)`` coordinates are eliminated and the remaining ``n``
    become the solver variables. ``theta0`` may be those ``n`` coordinates or
    a full feasible point; by default a strictly interior point is computed.
    ``use_smw`` selects the low-rank Newton solve (``"auto"`` uses it when
    fewer coordinates are eliminated than kept).
    """
    gem = gem or GemConfig()
    amap = polytope_affine_map(B, c, lower, upper)
    rebased = rebase_to_unit_box(poly, amap.lower, amap.lower + amap.scale, delta=gem.delta, K=K)
    family = ShiftedBinomialFamily(rebased, amap)
    n, p = amap.n_free, poly.dim
    if use_smw == "auto":
        use_smw = p - n < n
    floor = 1e-12

    def feasible(theta):
        lam = family.lam(theta)
        return bool(np.all(lam > floor) and np.all(1.0 - lam > floor))

    if theta0 is None:
        start = interior_point(np.vstack([amap.H, -amap.H]), np.concatenate([1.0 - amap.w, amap.w]))
    else:
        theta0 = np.asarray(theta0, dtype=float)
        if theta0.shape == (p,):
            theta0 = amap.free_coordinates(theta0)
        start = as_vector(theta0, "theta0", n)
        if not feasible(start):
            raise DomainError("theta0 must be strictly inside the polytope")

    state = {}
    s1, s2 = amap.scale[:n], amap.scale[n:]
    inner = _inner_solver(gem, family.objective, feasible)

    def newton_direction(theta):
        weights = family.curvature_weights(theta, state["mean_q"])
        grad = family.surrogate_gradient(theta, state["mean_q"])
        if use_smw:
            return smw_apply(s1**2 / weights[:n], s2**2 / weights[n:], amap.M, grad)
        return cholesky_factor(family.surrogate_hessian(theta, state["mean_q"]), pivot_tol=0.0).solve(grad)

    box_rates = np.vstack([amap.H, -amap.H])

    def walls(theta):
        lam = family.lam(theta)
        return box_rates, np.concatenate([lam, 1.0 - lam])

    def mstep(anchor):
        mean_q = family.expectation_q(anchor)
        state["mean_q"] = mean_q
        model = SurrogateModel(
            value=lambda t: family.surrogate(t, anchor, mean_q),
            gradient=lambda t: family.surrogate_gradient(t, mean_q),
            hessian=lambda t: family.surrogate_hessian(t, mean_q),
            direction=newton_direction,
            walls=walls,
            floor=floor,
        )
        return inner(model, anchor)

    H = amap.H
    jac = np.vstack([-H, H])

    def report(theta, previous):
        lam = family.lam(theta)
        f = family.objective(theta)
        grad = family.gradient(theta)
        if previous is None:
            kkt = float("nan")
        else:
            change = family.expectation_q(theta) - state["mean_q"]
            nu = np.concatenate([-change / lam, change / (1.0 - lam)])
            g = np.concatenate([-lam, lam - 1.0])
            kkt = min(kkt_certificate(grad, jac, g, nu), fitted_kkt_certificate(grad, jac, g))
        return poly(amap.original(theta)), f, float(np.linalg.norm(grad)), kkt, family.margin(theta)

    result = _mm_loop(mstep, report, start, gem, amap.original)
    result.extras.update(K=rebased.K, smw=use_smw)
    return result


# --------------------------------------------------------------------------
# Quadratic under linear inequalities
# --------------------------------------------------------------------------


def mstep_state(objective: QuadraticObjective, A, c, sigma_inv, anchor) -> MStepState:
    """Slacks and linear coefficient defining the inequality-QP M-step at ``anchor``."""
    return MStepState(mu=c - A.T @ anchor, nu=objective.b - (sigma_inv - objective.Q) @ anchor)


def solve_qp_inequality(objective: QuadraticObjective, A, c, sigma="auto", theta0=None, gem=None) -> SolveResult:
    """Minimize ``0.5 theta' Q theta + b' theta`` subject to ``A' theta <= c``.

    ``A`` has one column per constraint. ``Q`` may be indefinite as long as
    ``sigma^{-1} - Q`` is positive definite; the result is then a KKT point.
    The M-step minimizes
    ``-sum_j (a_j' theta + mu_j ln(c_j - a_j' theta)) + 0.5 theta' sigma^{-1} theta + nu' theta``.
    """
    gem = gem or GemConfig()
    A = as_matrix(A, "A", (objective.dim, None))
    c = as_vector(c, "c", A.shape[1])
    sig = _resolve_sigma(sigma, objective.Q, gem.shrink)
    family = PoissonNormalFamily(objective, A, c, sig)
    floor = _margin_floor(c)

    def feasible(theta):
        return bool(np.all(family.slack(theta) >= floor))

    if theta0 is None:
        zero = np.zeros(objective.dim)
        start = zero if feasible(zero) else interior_point(A.T, c)
    else:
        start = as_vector(theta0, "theta0", objective.dim)
        if not feasible(start):
            raise DomainError("theta0 must satisfy A' theta < c strictly")

    inner = _inner_solver(gem, family.objective, feasible)
    slack_rates = -A.T

    def walls(theta):
        return slack_rates, family.slack(theta)

    def mstep(anchor):
        mean_q = family.expectation_q(anchor)
        model = SurrogateModel(
            value=lambda t: family.surrogate(t, anchor, mean_q),
            gradient=lambda t: family.surrogate_gradient(t, mean_q),
            hessian=lambda t: family.surrogate_hessian(t, mean_q),
            direction=lambda t: family.newton_direction(t, mean_q),
            walls=walls,
            floor=floor,
        )
        return inner(model, anchor)

    def report(theta, previous):
        y = family.slack(theta)
        grad = family.gradient(theta)
        if previous is None:
            kkt = float("nan")
        else:
            nu = family.slack(previous) / y - 1.0
            kkt = min(kkt_certificate(grad, A.T, -y, nu), fitted_kkt_certificate(grad, A.T, -y))
        f = family.objective(theta)
        return f, f, float(np.linalg.norm(grad)), kkt, float(np.min(y, initial=np.inf))

    result = _mm_loop(mstep, report, start, gem, lambda t: t)
    result.extras["sigma"] = family.sigma
    return result


# --------------------------------------------------------------------------
# Dual route for QP and LP
# --------------------------------------------------------------------------


def setup_dual_qp(A, b, c, Q=None) -> DualQpSetup:
    """Scale the data of ``min c'x + 0.5 x'Qx s.t. A x = b, x >= 0`` for the dual route.

    ``A`` must have full row rank.
    """
    A = as_matrix(A, "A")
    b = as_vector(b, "b", A.shape[0])
    c = as_vector(c, "c", A.shape[1])
    if A.shape[0] > A.shape[1] or np.linalg.matrix_rank(A) < A.shape[0]:
        raise DimensionError("A must have full row rank")
    xi = A.T @ cholesky_factor(A @ A.T).solve(b)
    scale = max(float(np.max(xi)), 0.0) + 1.0
    Q_hat = None
    if Q is not None:
        Q = as_matrix(Q, "Q", (A.shape[1], A.shape[1]))
        if not np.any(Q):
            Q = None
        else:
            Q_hat = Q / scale
    return DualQpSetup(A=A, b=b, c=c, Q=Q, xi=xi, scale=scale, xi_hat=xi / scale, Q_hat=Q_hat)


def solve_dual_qp(setup: DualQpSetup, sigma="auto", start=None, gem=None) -> SolveResult:
    """Maximize ``b' theta1 - 0.5 theta2' Q theta2`` s.t. ``A' theta1 - Q theta2 <= c``.

    Without ``Q`` this is the LP ``max b' theta s.t. A' theta <= c``. The
    result's ``x`` is ``theta1`` and ``objective`` is the dual value; the
    trace's original-objective column holds its negation so that it is
    non-increasing. ``start`` is ``theta1`` or the stacked ``(theta1, theta2)``.
    """
    gem = gem or GemConfig()
    A, c = setup.A, setup.c
    n, p = A.shape
    has_q = setup.Q is not None
    sig = _resolve_sigma(sigma, setup.Q_hat, gem.shrink) if has_q else None
    family = DualPoissonFamily(A, c, setup.xi_hat, setup.Q, setup.Q_hat, sig)
    floor = _margin_floor(c)

    def feasible(z):
        return bool(np.all(family.rates(z) >= floor))

    if start is None:
        G = np.hstack([A.T, -setup.Q]) if has_q else A.T
        zero = np.zeros(family.dim)
        z0 = zero if feasible(zero) else interior_point(G, c)
    else:
        z0 = np.asarray(start, dtype=float).reshape(-1)
        if has_q and z0.shape[0] == n:
            z0 = np.concatenate([z0, np.zeros(p)])
        z0 = as_vector(z0, "start", family.dim)
        if not feasible(z0):
            raise DomainError("start must be strictly dual feasible")

    inner = _inner_solver(gem, family.objective, feasible)
    rate_rows = family._rate_jacobian().T

    def walls(z):
        return rate_rows, family.rates(z)

    def mstep(anchor):
        mean_q = family.expectation_q(anchor)
        model = SurrogateModel(
            value=lambda t: family.surrogate(t, anchor, mean_q),
            gradient=lambda t: family.surrogate_gradient(t, mean_q),
            hessian=lambda t: family.surrogate_hessian(t, mean_q),
            direction=lambda t: family.newton_direction(t, mean_q),
            walls=walls,
            floor=floor,
        )
        return inner(model, anchor)

    jac = -family._rate_jacobian().T  # rows: constraints -lam_j <= 0

    def dual_value(z):
        t1, t2 = family.split(z)
        value = setup.b @ t1
        if has_q:
            value -= 0.5 * t2 @ setup.Q @ t2
        return float(value)

    def report(z, previous):
        lam = family.rates(z)
        grad = family.gradient(z)
        if previous is None:
            kkt = float("nan")
        else:
            nu = (1.0 - setup.xi_hat) * (family.rates(previous) / lam - 1.0)
            kkt = min(kkt_certificate(grad, jac, -lam, nu), fitted_kkt_certificate(grad, jac, -lam))
        return -dual_value(z), family.objective(z), float(np.linalg.norm(grad)), kkt, float(np.min(lam))

    result = _mm_loop(mstep, report, z0, gem, lambda z: family.split(z)[0].copy())
    result.objective = dual_value(result.theta)
    result.initial_objective = dual_value(z0)
    if has_q:
        result.extras["theta2"] = family.split(result.theta)[1].copy()
    result.extras["scale"] = setup.scale
    return result
