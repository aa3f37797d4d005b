"""Linear-algebra and scalar root-finding helpers used by the solvers."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from ._errors import BracketError, DimensionError, NotPositiveDefiniteError
from ._validation import as_symmetric

__all__ = [
    "SpdFactor",
    "cholesky_factor",
    "is_spd_dominated",
    "diagonal_sigma_from_q",
    "smw_apply",
    "monotone_root",
    "soft_threshold",
    "stacked_newton_direction",
]

PIVOT_TOL = 1e-12
# Relative size below which a diagonal entry of the triangular factor counts as zero.
_RANK_TOL = 1e-14


class SpdFactor:
    """Cholesky factor ``L`` of a symmetric positive definite matrix."""

    def __init__(self, L):
        self.L = L

    def solve(self, rhs):
        y = np.linalg.solve(self.L, rhs)
        return np.linalg.solve(self.L.T, y)


def cholesky_factor(matrix, pivot_tol=PIVOT_TOL) -> SpdFactor:
    """Factor ``matrix``; every squared pivot must exceed ``pivot_tol`` times its scale."""
    matrix = np.asarray(matrix, dtype=float)
    try:
        L = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    scale = max(1.0, float(np.max(np.abs(np.diag(matrix)), initial=0.0)))
    if np.min(np.diag(L) ** 2, initial=np.inf) <= pivot_tol * scale:
        raise NotPositiveDefiniteError("matrix is numerically singular")
    return SpdFactor(L)


def is_spd_dominated(sigma_inv, Q) -> bool:
    """Return True when ``sigma_inv - Q`` is positive definite."""
    sigma_inv = np.asarray(sigma_inv, dtype=float)
    if sigma_inv.ndim == 1:
        sigma_inv = np.diag(sigma_inv)
    Q = as_symmetric(Q, "Q")
    if sigma_inv.shape != Q.shape:
        raise DimensionError("sigma_inv and Q must have the same shape")
    try:
        cholesky_factor(0.5 * (sigma_inv + sigma_inv.T) - Q)
    except NotPositiveDefiniteError:
        return False
    return True


def diagonal_sigma_from_q(Q, shrink=0.9) -> np.ndarray:
    """Diagonal step sizes ``sigma`` with ``diag(1/sigma) - Q`` positive definite.

    Row ``j`` uses ``shrink / (q_jj + sum_{h != j} |q_jh|)``; strict diagonal
    dominance of ``diag(1/sigma) - Q`` follows from ``shrink < 1``. Rows whose
    denominator is not positive fall back to ``shrink``, which keeps the same
    dominance. The result is the vector of diagonal entries.
    """
    if not 0.0 < shrink < 1.0:
        raise ValueError("shrink must lie in (0, 1)")
    Q = as_symmetric(Q, "Q")
    absrow = np.sum(np.abs(Q), axis=1) - np.abs(np.diag(Q))
    denom = np.diag(Q) + absrow
    sigma = np.full(Q.shape[0], float(shrink))
    positive = denom > 0
    sigma[positive] = shrink / denom[positive]
    return sigma


def smw_apply(r1, r2, M, g):
    """Compute ``(R1^{-1} + M' R2^{-1} M)^{-1} g`` for positive diagonals ``R1, R2``.

    Uses ``R1 g - R1 M' (R2 + M R1 M')^{-1} M R1 g``, so only a
    ``len(r2)``-sized system is factored.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    M = np.asarray(M, dtype=float)
    g = np.asarray(g, dtype=float)
    if M.shape != (r2.shape[0], r1.shape[0]) or g.shape[0] != r1.shape[0]:
        raise DimensionError("smw_apply: inconsistent shapes")
    if np.any(r1 <= 0) or np.any(r2 <= 0):
        raise NotPositiveDefiniteError("smw_apply needs positive diagonals")
    r1g = r1 * g
    inner = np.diag(r2) + (M * r1) @ M.T
    corr = cholesky_factor(inner).solve(M @ r1g)
    return r1g - r1 * (M.T @ corr)


def monotone_root(func, lo, hi, tol=1e-12, dfunc=None, max_bisect=200):
    """Root of an increasing function on the open interval ``(lo, hi)``.

    Newton steps (when ``dfunc`` is given) are taken inside the current
    bracket and replaced by bisection whenever they leave it. The endpoints
    are never evaluated, so ``func`` may blow up there. Stops once
    ``|func(x)| <= tol`` or the bracket is narrower than ``tol`` (relative to
    the magnitude of ``x``). A root closer to an endpoint than floating point
    can resolve yields the nearest evaluated interior point. Raises
    :class:`BracketError` on a non-finite value or when the iteration budget
    runs out.
    """
    a, b = float(lo), float(hi)
    if not a < b:
        raise BracketError("empty interval")
    x = 0.5 * (a + b)
    for _ in range(max_bisect + 64):
        val = func(x)
        if not np.isfinite(val):
            raise BracketError(f"function is not finite at {x!r}")
        if abs(val) <= tol:
            return x
        if val < 0:
            a = x
        else:
            b = x
        if b - a <= tol * max(1.0, abs(x)) or b - a <= 4 * np.spacing(max(abs(a), abs(b))):
            # Either a sign change is bracketed, or the bracket has collapsed
            # onto an endpoint and the root lies within a few ulps of it.
            return x
        candidate = None
        if dfunc is not None:
            slope = dfunc(x)
            if slope > 0 and np.isfinite(slope):
                candidate = x - val / slope
        if candidate is None or not a < candidate < b:
            candidate = 0.5 * (a + b)
        x = candidate
    raise BracketError("root search did not converge")


def soft_threshold(a, z):
    """Elementwise ``sign(z) * max(|z| - a, 0)``."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - a, 0.0)


def stacked_newton_direction(J, weights, v, prox_root=None, prox_rhs=None):
    """Solve ``(J diag(w) J' + R R') d = J v + R R' s`` as a least-squares problem.

    The rows ``sqrt(w) J'`` and ``R'`` are stacked and solved with an
    orthogonal factorization, which avoids squaring the condition number the
    way the normal equations would. That matters for barrier-type Hessians
    whose weights span many orders of magnitude near the boundary.
    ``prox_root`` is ``R`` (variables x k) and ``prox_rhs`` is ``s``.
    """
    J = np.asarray(J, dtype=float)
    root_w = np.sqrt(np.asarray(weights, dtype=float))
    rows = [root_w[:, None] * J.T]
    rhs = [np.asarray(v, dtype=float) / root_w]
    if prox_root is not None:
        rows.append(np.asarray(prox_root, dtype=float).T)
        rhs.append(np.asarray(prox_root, dtype=float).T @ np.asarray(prox_rhs, dtype=float))
    system = np.vstack(rows)
    q, r = np.linalg.qr(system)
    diag = np.abs(np.diag(r))
    if diag.size < J.shape[0] or not np.all(np.isfinite(diag)) or np.min(diag) <= _RANK_TOL * np.max(diag):
        raise NotPositiveDefiniteError("Newton system is singular")
    return solve_triangular(r, q.T @ np.concatenate(rhs))
