"""Solvers whose update is a closed-form preconditioned gradient step.

Every update here is the exact minimizer of an exponential-family
surrogate, so the objective never increases and iterates stay strictly
inside the feasible set.
"""

from __future__ import annotations

import logging

import numpy as np

from ._errors import BoundViolationError, BracketError, DimensionError, DomainError
from ._validation import as_bounds, as_vector
from .families import BinomialFamily, MultinomialFamily, NormalFamily
from .numerics import diagonal_sigma_from_q, is_spd_dominated, monotone_root, soft_threshold
from .problem import (
    PolynomialObjective,
    QuadraticObjective,
    k_bound_simplex,
    rebase_to_unit_box,
    simplex_reduce,
)
from .results import IterateTrace, SolveResult, SolverConfig, Status, kkt_certificate

__all__ = [
    "solve_unconstrained_qp",
    "solve_l1_qp",
    "solve_poly_rect",
    "solve_poly_simplex",
    "solve_box_qp_cubic",
    "box_update_cubic",
]

log = logging.getLogger(__name__)

_RECOVERABLE = (BoundViolationError, BracketError, FloatingPointError, np.linalg.LinAlgError)


def _resolve_sigma(sigma, Q, shrink, diagonal_only=False):
    if isinstance(sigma, str):
        if sigma != "auto":
            raise ValueError(f"unknown sigma rule {sigma!r}")
        return diagonal_sigma_from_q(Q, shrink)
    sigma = np.asarray(sigma, dtype=float)
    if diagonal_only and sigma.ndim != 1:
        raise DimensionError("this solver needs a diagonal sigma given as a vector")
    return sigma


def _identity(state):
    return state


def _fixed_point_loop(update, report, theta0, config, to_original=_identity, coords=_identity):
    """Drive ``state <- update(state)`` with the shared stopping rule.

    ``report(state)`` returns ``(f_original, f_transformed, grad_norm, kkt,
    margin)`` and also receives the previous state when there is one.
    ``coords`` maps the state to the solver variables, which is where step
    norms are measured and what ``result.theta`` holds; the state may carry
    extra redundant coordinates for precision. A proposed step with norm at
    most ``tol * (1 + ||theta||)`` ends the run without being applied.
    """
    trace = IterateTrace(config.trace_every)
    theta = np.array(theta0, dtype=float)
    try:
        f0, t0, _, kkt, _ = report(theta)
    except _RECOVERABLE as exc:
        return SolveResult(
            x=to_original(theta), theta=theta, objective=float("nan"), status=Status.NUMERICAL_FAILURE,
            n_iter=0, trace=trace, initial_objective=float("nan"), initial_transformed=float("nan"),
            message=f"invalid starting point: {exc}",
        )
    status, message, n_iter = Status.MAX_ITER, "", 0
    current = (f0, t0, kkt)
    for it in range(1, config.max_iter + 1):
        try:
            new = update(theta)
        except _RECOVERABLE as exc:
            status, message = Status.NUMERICAL_FAILURE, str(exc)
            break
        if not np.all(np.isfinite(new)):
            status, message = Status.NUMERICAL_FAILURE, "update produced a non-finite point"
            break
        step = float(np.linalg.norm(coords(new) - coords(theta)))
        if step <= config.tol * (1.0 + np.linalg.norm(coords(theta))):
            status = Status.CONVERGED
            break
        try:
            f_orig, f_tr, gnorm, kkt, margin = report(new, previous=theta)
        except _RECOVERABLE as exc:
            status, message = Status.NUMERICAL_FAILURE, str(exc)
            break
        if not margin > 0:
            status, message = Status.NUMERICAL_FAILURE, "iterate left the interior of the feasible set"
            break
        theta, n_iter = new, it
        current = (f_orig, f_tr, kkt)
        last_row = (it, f_orig, f_tr, step, gnorm, kkt, margin)
        trace.record(*last_row)
        log.debug("iter %d objective %.17g step %.3e kkt %.3e", it, f_orig, step, kkt)
    if n_iter:
        # the final accepted iterate is always traced, even when thinning rows
        trace.record(*last_row, force=True)
    if status is Status.NUMERICAL_FAILURE:
        log.warning("numerical failure after %d iterations: %s", n_iter, message)
    return SolveResult(
        x=to_original(theta), theta=np.array(coords(theta)), objective=current[0], status=status, n_iter=n_iter,
        trace=trace, initial_objective=f0, initial_transformed=t0, kkt_residual=current[2], message=message,
    )


def solve_unconstrained_qp(objective: QuadraticObjective, sigma="auto", theta0=None, config=None) -> SolveResult:
    """Minimize ``0.5 theta' Q theta + b' theta`` with ``theta <- theta - sigma (Q theta + b)``.

    ``sigma`` is ``"auto"`` (diagonal rule from Q), a vector of diagonal
    entries, or a full SPD matrix; ``sigma^{-1} - Q`` must be positive
    definite.
    """
    config = config or SolverConfig()
    sig = _resolve_sigma(sigma, objective.Q, config.shrink)
    family = NormalFamily(objective, sig)
    theta0 = np.zeros(objective.dim) if theta0 is None else as_vector(theta0, "theta0", objective.dim)

    def report(theta, previous=None):
        f = family.objective(theta)
        g = float(np.linalg.norm(family.gradient(theta)))
        return f, f, g, g, np.inf

    result = _fixed_point_loop(family.natural_step, report, theta0, config)
    result.extras["sigma"] = family.sigma
    return result


def solve_l1_qp(objective: QuadraticObjective, sigma="auto", theta0=None, config=None) -> SolveResult:
    """Minimize ``0.5 theta' Q theta + b' theta + ||theta||_1`` by soft-thresholded steps.

    Each coordinate takes ``z_j = theta_j - sigma_j (Q theta + b)_j`` and
    then ``theta_j = soft(sigma_j, z_j)``. ``sigma`` must be diagonal.
    """
    config = config or SolverConfig()
    sig = _resolve_sigma(sigma, objective.Q, config.shrink, diagonal_only=True)
    if not is_spd_dominated(np.diag(1.0 / sig), objective.Q):
        raise DomainError("diag(1/sigma) - Q must be positive definite")
    theta0 = np.zeros(objective.dim) if theta0 is None else as_vector(theta0, "theta0", objective.dim)

    def total(theta):
        return objective(theta) + float(np.sum(np.abs(theta)))

    def update(theta):
        return soft_threshold(sig, theta - sig * objective.gradient(theta))

    def report(theta, previous=None):
        value = total(theta)
        grad = objective.gradient(theta)
        residual = float(np.linalg.norm(theta - soft_threshold(1.0, theta - grad)))
        return value, value, float(np.linalg.norm(grad)), residual, np.inf

    result = _fixed_point_loop(update, report, theta0, config)
    result.extras["sigma"] = sig
    return result


def solve_poly_rect(poly: PolynomialObjective, lower, upper, theta0=None, config=None, K=None) -> SolveResult:
    """Minimize a polynomial over the box ``lower <= lam <= upper``.

    The polynomial is moved to the unit box and the update is
    ``theta_j <- theta_j - theta_j (1 - theta_j) / m_j * df/dtheta_j`` with
    ``f = -ln(K - F~)``. ``theta0`` is given in the original coordinates and
    defaults to the box centre; ``K`` overrides the automatic bound.
    """
    config = config or SolverConfig()
    lo, hi = as_bounds(lower, upper, poly.dim)
    rebased = rebase_to_unit_box(poly, lo, hi, delta=config.delta, K=K)
    family = BinomialFamily(rebased)
    p = poly.dim
    if theta0 is None:
        start = np.full(p, 0.5)
    else:
        start = rebased.to_unit(as_vector(theta0, "theta0", p))
        if not family.is_interior(start):
            raise DomainError("theta0 must lie strictly inside the box")
    eye = np.eye(p)

    def report(state, previous=None):
        theta, rest = state[:p], state[p:]
        f = family.objective(theta)
        grad = family.gradient(theta)
        nu_lo, nu_hi = rest * grad, -theta * grad
        kkt = kkt_certificate(
            grad, np.vstack([-eye, eye]), np.concatenate([-theta, -rest]), np.concatenate([nu_lo, nu_hi])
        )
        return poly(rebased.to_original(theta)), f, float(np.linalg.norm(grad)), kkt, float(np.min(state))

    result = _fixed_point_loop(
        family.paired_step, report, np.concatenate([start, 1.0 - start]), config,
        to_original=lambda state: rebased.to_original(state[:p]), coords=lambda state: state[:p],
    )
    result.extras["K"] = rebased.K
    return result


def solve_poly_simplex(poly: PolynomialObjective, theta0=None, config=None, K=None) -> SolveResult:
    """Minimize a polynomial over the probability simplex.

    The update is ``theta_j <- theta_j - theta_j / m * (df/dtheta_j - V)``
    with ``V = sum_h theta_h df/dtheta_h`` in the first ``p - 1``
    coordinates; it is carried out on the full point so the last coordinate
    keeps its relative precision near the boundary. ``theta0`` (length
    ``p - 1``) defaults to the barycentre; the returned ``x`` is the full
    point and ``theta`` its first ``p - 1`` entries.
    """
    config = config or SolverConfig()
    reduced, lift = simplex_reduce(poly)
    if K is None:
        K = k_bound_simplex(poly, config.delta)
    family = MultinomialFamily(reduced, K, max(poly.total_degree, 1))
    p = poly.dim
    if theta0 is None:
        start = np.full(p, 1.0 / p)
    else:
        theta0 = as_vector(theta0, "theta0", p - 1)
        if not family.is_interior(theta0):
            raise DomainError("theta0 must lie strictly inside the simplex")
        start = lift(theta0)
    jac = np.vstack([-np.eye(p - 1), np.ones((1, p - 1))])

    def report(lam, previous=None):
        theta = lam[:-1]
        f = family.objective(theta)
        grad = family.gradient(theta)
        v = theta @ grad
        nu = np.concatenate([grad - v, [-v]])
        g = -lam
        kkt = kkt_certificate(grad, jac, g, nu)
        return poly(lam), f, float(np.linalg.norm(grad)), kkt, float(np.min(lam))

    result = _fixed_point_loop(family.multiplicative_step, report, start, config, coords=lambda lam: lam[:-1])
    result.extras["K"] = float(K)
    return result


def box_update_cubic(theta_bar, kappa, sigma, lower, upper):
    """Coefficients (highest power first) of the cubic solved by one box update.

    Clearing denominators in the coordinate optimality condition gives
    ``t^3 - (l + u + s k) t^2 + (l u + s k (l + u) - s (u - l)) t
    + s (tb (u - l) - k l u)``; its unique root in ``(l, u)`` is the update.
    """
    s, k, l, u, tb = sigma, kappa, lower, upper, theta_bar
    return np.array([1.0, -(l + u + s * k), l * u + s * k * (l + u) - s * (u - l), s * (tb * (u - l) - k * l * u)])


def solve_box_qp_cubic(objective: QuadraticObjective, lower, upper, sigma="auto", theta0=None, config=None) -> SolveResult:
    """Minimize a (possibly nonconvex) quadratic over a box.

    Each coordinate solves
    ``-(tb - l)/(t - l) + (u - tb)/(u - t) - kappa + t / sigma = 0`` on
    ``(l, u)`` with ``kappa = ((sigma^{-1} - Q) tb - b)_j``; the left side is
    increasing in ``t`` so the root is unique. ``sigma`` must be diagonal.
    """
    config = config or SolverConfig()
    lo, hi = as_bounds(lower, upper, objective.dim)
    sig = _resolve_sigma(sigma, objective.Q, config.shrink, diagonal_only=True)
    sigma_inv = np.diag(1.0 / sig)
    if not is_spd_dominated(sigma_inv, objective.Q):
        raise DomainError("diag(1/sigma) - Q must be positive definite")
    p = objective.dim
    if theta0 is None:
        start = 0.5 * (lo + hi)
    else:
        start = as_vector(theta0, "theta0", p)
        if np.any(start <= lo) or np.any(start >= hi):
            raise DomainError("theta0 must lie strictly inside the box")
    eye = np.eye(p)
    jac = np.vstack([eye, -eye])

    def update(theta_bar):
        kappa = (sigma_inv - objective.Q) @ theta_bar - objective.b
        below, above = theta_bar - lo, hi - theta_bar
        new = np.empty(p)
        for j in range(p):
            def phi(t, j=j):
                return -below[j] / (t - lo[j]) + above[j] / (hi[j] - t) - kappa[j] + t / sig[j]

            def dphi(t, j=j):
                return below[j] / (t - lo[j]) ** 2 + above[j] / (hi[j] - t) ** 2 + 1.0 / sig[j]

            scale = 1.0 + abs(kappa[j]) + abs(theta_bar[j]) / sig[j]
            new[j] = monotone_root(phi, lo[j], hi[j], tol=1e-14 * scale, dfunc=dphi)
        return new

    def report(theta, previous=None):
        f = objective(theta)
        grad = objective.gradient(theta)
        g = np.concatenate([theta - hi, lo - theta])
        if previous is None:
            kkt = float("nan")
        else:
            nu = np.concatenate([(hi - previous) / (hi - theta), (previous - lo) / (theta - lo)]) - 1.0
            kkt = kkt_certificate(grad, jac, g, nu)
        margin = float(np.min(np.minimum(theta - lo, hi - theta)))
        return f, f, float(np.linalg.norm(grad)), kkt, margin

    result = _fixed_point_loop(update, report, start, config)
    result.extras["sigma"] = sig
    return result
