"""Problem descriptions: polynomial and quadratic objectives, feasible sets,
and the coordinate changes that put a polynomial on the unit box.

A polynomial is stored as a coefficient vector ``coefs`` (length I) and an
integer exponent matrix ``exps`` (I x p); it evaluates to
``sum_i coefs[i] * prod_j lam[j] ** exps[i, j]`` with ``0 ** 0 == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from ._errors import BoundViolationError, DimensionError, DomainError
from ._validation import as_bounds, as_matrix, as_symmetric, as_vector

__all__ = [
    "MonomialTerm",
    "PolynomialObjective",
    "QuadraticObjective",
    "Unconstrained",
    "Box",
    "Simplex",
    "Polytope",
    "Polyhedron",
    "RebasedProblem",
    "AffineMap",
    "ReducedSimplexPolynomial",
    "eval_polynomial",
    "grad_polynomial",
    "rebase_to_unit_box",
    "k_bound_simplex",
    "barrier_objective",
    "simplex_reduce",
    "polytope_affine_map",
    "default_slack",
]


@dataclass(frozen=True)
class MonomialTerm:
    coef: float
    exps: tuple[int, ...]


class PolynomialObjective:
    """Sparse multivariate polynomial in canonical form.

    Exponent rows are sorted lexicographically, repeated rows are merged and
    zero coefficients are dropped. A polynomial whose terms all cancel keeps a
    single zero constant so that it still knows its dimension.
    """

    def __init__(self, coefs, exps, dim=None):
        coefs = np.asarray(coefs, dtype=float).reshape(-1)
        exps = np.asarray(exps)
        if exps.ndim == 1 and coefs.shape[0] == 1:
            exps = exps.reshape(1, -1)
        if exps.ndim != 2 or exps.shape[0] != coefs.shape[0]:
            raise DimensionError("exps must be a matrix with one row per coefficient")
        if coefs.shape[0] == 0:
            raise ValueError("a polynomial needs at least one term")
        if dim is None:
            dim = exps.shape[1]
        if exps.shape[1] != dim:
            raise DimensionError(f"exponent rows have length {exps.shape[1]}, expected {dim}")
        if dim < 1:
            raise DimensionError("a polynomial needs at least one variable")
        if not np.all(np.isfinite(coefs)):
            raise ValueError("coefficients must be finite")
        if np.any(exps != np.round(exps)) or np.any(exps < 0):
            raise ValueError("exponents must be non-negative integers")
        exps = exps.astype(np.int64)

        merged: dict[tuple[int, ...], float] = {}
        for coef, row in zip(coefs, map(tuple, exps.tolist())):
            merged[row] = merged.get(row, 0.0) + float(coef)
        rows = sorted(key for key, val in merged.items() if val != 0.0)
        if not rows:
            rows = [(0,) * dim]
            merged = {rows[0]: 0.0}

        self.dim = int(dim)
        self.coefs = np.array([merged[r] for r in rows], dtype=float)
        self.exps = np.array(rows, dtype=np.int64).reshape(len(rows), dim)
        self.coefs.setflags(write=False)
        self.exps.setflags(write=False)
        self._derivative_table = None

    @classmethod
    def from_terms(cls, terms, dim=None):
        terms = list(terms)
        if not terms:
            raise ValueError("a polynomial needs at least one term")
        coefs = [float(t.coef) for t in terms]
        exps = [list(t.exps) for t in terms]
        lengths = {len(e) for e in exps}
        if len(lengths) != 1:
            raise DimensionError("all exponent tuples must have the same length")
        return cls(coefs, exps, dim)

    @property
    def terms(self) -> list[MonomialTerm]:
        return [MonomialTerm(float(c), tuple(int(v) for v in e)) for c, e in zip(self.coefs, self.exps)]

    @property
    def degrees(self) -> np.ndarray:
        """Largest exponent of each variable."""
        return self.exps.max(axis=0)

    @property
    def total_degree(self) -> int:
        return int(self.exps.sum(axis=1).max())

    def __call__(self, lam):
        return eval_polynomial(self, lam)

    def gradient(self, lam):
        return grad_polynomial(self, lam)

    def derivative_table(self):
        """Terms of all first partial derivatives as ``(coefs, exps, onehot)``.

        Row ``k`` is a term of ``dF/dlam_j`` for the ``j`` marked in
        ``onehot[k]``; summing ``coef * monomial`` against ``onehot`` gives the
        gradient in one pass.
        """
        if self._derivative_table is None:
            coefs, exps, owner = [], [], []
            for j in range(self.dim):
                keep = self.exps[:, j] > 0
                lowered = self.exps[keep].copy()
                lowered[:, j] -= 1
                coefs.append(self.coefs[keep] * self.exps[keep, j])
                exps.append(lowered)
                owner.append(np.full(int(keep.sum()), j))
            owner = np.concatenate(owner)
            onehot = np.zeros((owner.size, self.dim))
            onehot[np.arange(owner.size), owner] = 1.0
            self._derivative_table = (np.concatenate(coefs), np.vstack(exps), onehot)
        return self._derivative_table

    def __eq__(self, other):
        if not isinstance(other, PolynomialObjective):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.exps, other.exps)
            and np.array_equal(self.coefs, other.coefs)
        )

    def __repr__(self):
        return f"PolynomialObjective(dim={self.dim}, n_terms={len(self.coefs)})"


def _as_points(poly, lam):
    pts = np.asarray(lam, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != poly.dim:
        raise DimensionError(f"point has {pts.shape[1]} coordinates, polynomial has {poly.dim}")
    return pts, single


def eval_polynomial(poly: PolynomialObjective, lam):
    """Evaluate at one point (shape ``(p,)``) or a batch (shape ``(N, p)``)."""
    pts, single = _as_points(poly, lam)
    # (N, I, p) powers; 0.0 ** 0 is 1.0 in numpy, which is the convention we want.
    monomials = np.prod(pts[:, None, :] ** poly.exps[None, :, :], axis=2)
    values = monomials @ poly.coefs
    return float(values[0]) if single else values


def grad_polynomial(poly: PolynomialObjective, lam):
    """Gradient at one point or a batch, exact for every exponent including zero."""
    pts, single = _as_points(poly, lam)
    coefs, exps, onehot = poly.derivative_table()
    monomials = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)
    grads = (monomials * coefs) @ onehot
    return grads[0] if single else grads


@dataclass(frozen=True)
class QuadraticObjective:
    """``f(theta) = 0.5 theta' Q theta + b' theta``."""

    Q: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        b = as_vector(self.b, "b")
        Q = as_symmetric(self.Q, "Q", b.shape[0])
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        return float(0.5 * theta @ self.Q @ theta + self.b @ theta)

    def gradient(self, theta):
        return self.Q @ np.asarray(theta, dtype=float) + self.b

    def to_polynomial(self) -> PolynomialObjective:
        """Expand into monomials; used when a box QP is routed to the polynomial solver."""
        p = self.dim
        coefs, exps = [], []
        for j in range(p):
            for h in range(j, p):
                row = [0] * p
                row[j] += 1
                row[h] += 1
                coefs.append(0.5 * self.Q[j, j] if j == h else self.Q[j, h])
                exps.append(row)
            row = [0] * p
            row[j] = 1
            coefs.append(self.b[j])
            exps.append(row)
        return PolynomialObjective(coefs, exps, p)


# --------------------------------------------------------------------------
# Feasible sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Unconstrained:
    dim: int


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = as_bounds(self.lower, self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


@dataclass(frozen=True)
class Simplex:
    """Probability simplex ``{lam >= 0, sum(lam) = 1}`` in ``dim`` coordinates."""

    dim: int

    def __post_init__(self):
        if self.dim < 2:
            raise DomainError("a simplex needs at least two coordinates")


@dataclass(frozen=True)
class Polytope:
    """``{B lam = c, lower <= lam <= upper}``."""

    B: np.ndarray
    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, hi = as_bounds(self.lower, self.upper)
        B = as_matrix(self.B, "B", (None, lo.shape[0]))
        c = as_vector(self.c, "c", B.shape[0])
        for name, val in (("B", B), ("c", c), ("lower", lo), ("upper", hi)):
            object.__setattr__(self, name, val)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


@dataclass(frozen=True)
class Polyhedron:
    """``{theta : A' theta <= c}`` with one constraint per column of ``A``."""

    A: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        c = as_vector(self.c, "c", A.shape[1])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def slack(self, theta):
        return self.c - self.A.T @ np.asarray(theta, dtype=float)


# --------------------------------------------------------------------------
# Unit-box rebasing and the K bound
# --------------------------------------------------------------------------


def default_slack(bound: float) -> float:
    """Slack added to a K bound so that ``K - F`` stays strictly positive."""
    return 1e-6 * max(1.0, abs(bound))


@dataclass(frozen=True)
class RebasedProblem:
    """A polynomial rewritten on the unit box, together with its upper bound.

    ``tilde`` holds the non-constant part of the rebased polynomial and
    ``tilde_const`` its constant, so that ``F(lam) = tilde(theta) + tilde_const``
    with ``lam = lower + (upper - lower) * theta``.
    """

    tilde: PolynomialObjective
    tilde_const: float
    degrees: np.ndarray
    total_degree: int
    K: float
    slack: float
    lower: np.ndarray
    upper: np.ndarray
    original: PolynomialObjective = field(repr=False)

    @property
    def dim(self) -> int:
        return self.tilde.dim

    def value(self, theta):
        """Rebased polynomial value ``F~(theta)`` including the constant."""
        return self.tilde(theta) + self.tilde_const

    def to_original(self, theta):
        return self.lower + (self.upper - self.lower) * np.asarray(theta, dtype=float)

    def to_unit(self, lam):
        return (np.asarray(lam, dtype=float) - self.lower) / (self.upper - self.lower)


def _shifted_power(n: int, scale: float, shift: float) -> np.ndarray:
    """Coefficients of ``(scale * t + shift) ** n`` indexed by the power of ``t``."""
    return np.array([comb(n, k) * scale**k * shift ** (n - k) for k in range(n + 1)])


def rebase_to_unit_box(poly: PolynomialObjective, lower, upper, delta=None, K=None) -> RebasedProblem:
    """Substitute ``lam = lower + (upper - lower) * theta`` and bound the result.

    The bound is ``K = sum(max(a~_i, 0)) + b~ + delta``, which dominates the
    polynomial on the whole unit box because every rebased monomial lies in
    ``[0, 1]`` there. ``delta`` defaults to ``1e-6 * max(1, |bound|)``; zero is
    accepted to reproduce hand computations. Passing ``K`` overrides the bound
    verbatim (no check is made; a bad value surfaces at solve time).
    """
    lo, hi = as_bounds(lower, upper, poly.dim)
    scale = hi - lo
    expanded: dict[tuple[int, ...], float] = {}
    for coef, row in zip(poly.coefs, poly.exps):
        # Multiply out prod_j (scale_j t_j + lo_j) ** n_j one coordinate at a time.
        partial = {(): float(coef)}
        for j, n in enumerate(row):
            factors = _shifted_power(int(n), scale[j], lo[j])
            partial = {
                key + (k,): val * fac
                for key, val in partial.items()
                for k, fac in enumerate(factors)
                if fac != 0.0
            }
        for key, val in partial.items():
            expanded[key] = expanded.get(key, 0.0) + val

    const_key = (0,) * poly.dim
    tilde_const = expanded.pop(const_key, 0.0)
    if expanded:
        tilde = PolynomialObjective(list(expanded.values()), list(expanded.keys()), poly.dim)
    else:
        tilde = PolynomialObjective([0.0], [const_key], poly.dim)

    bound = float(np.sum(np.maximum(tilde.coefs, 0.0)) + tilde_const)
    if K is None:
        if delta is None:
            delta = default_slack(bound)
        if delta < 0:
            raise ValueError("delta must be non-negative")
        K = bound + delta
    else:
        delta = float(K) - bound
    return RebasedProblem(
        tilde=tilde,
        tilde_const=float(tilde_const),
        degrees=poly.degrees.copy(),
        total_degree=poly.total_degree,
        K=float(K),
        slack=float(delta),
        lower=lo,
        upper=hi,
        original=poly,
    )


def k_bound_simplex(poly: PolynomialObjective, delta=None) -> float:
    """Upper bound of a polynomial on the probability simplex.

    Every monomial lies in ``[0, 1]`` on the simplex, so the sum of positive
    coefficients plus a slack is a strict bound.
    """
    bound = float(np.sum(np.maximum(poly.coefs, 0.0)))
    if delta is None:
        delta = default_slack(bound)
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return bound + delta


def barrier_objective(problem: RebasedProblem, theta):
    """Return ``(f, grad f)`` for ``f(theta) = -ln(K - F~(theta))``.

    Raises :class:`BoundViolationError` when ``K - F~(theta) <= 0``.
    """
    theta = np.asarray(theta, dtype=float)
    gap = problem.K - problem.value(theta)
    if not gap > 0.0:
        raise BoundViolationError(f"K - F(theta) = {gap:.3e} is not positive")
    return -np.log(gap), problem.tilde.gradient(theta) / gap


class ReducedSimplexPolynomial:
    """A polynomial on the simplex written in its first ``p - 1`` coordinates."""

    def __init__(self, poly: PolynomialObjective):
        if poly.dim < 2:
            raise DomainError("simplex reduction needs at least two coordinates")
        self.poly = poly
        self.dim = poly.dim - 1

    @staticmethod
    def lift(theta):
        theta = np.asarray(theta, dtype=float)
        last = 1.0 - theta.sum(axis=-1, keepdims=True)
        return np.concatenate([theta, last], axis=-1)

    def __call__(self, theta):
        return self.poly(self.lift(theta))

    def gradient(self, theta):
        full = np.asarray(self.poly.gradient(self.lift(theta)))
        return full[..., :-1] - full[..., -1:]


def simplex_reduce(poly: PolynomialObjective):
    """Eliminate the last coordinate with ``lam_p = 1 - sum(theta)``.

    Returns ``(reduced, lift)``: an evaluator over ``p - 1`` variables with a
    ``gradient`` method, and the map back to the full simplex point.
    """
    reduced = ReducedSimplexPolynomial(poly)
    return reduced, reduced.lift


@dataclass(frozen=True)
class AffineMap:
    """Parametrisation of a polytope by its first ``n`` coordinates.

    ``unit(theta) = H theta + w`` gives the unit-box coordinates and
    ``original(theta)`` the coordinates in the problem's own units.
    ``M = B2^{-1} B1`` is kept because the Newton solve exploits it.
    """

    H: np.ndarray
    w: np.ndarray
    M: np.ndarray
    scale: np.ndarray
    lower: np.ndarray
    n_free: int

    def unit(self, theta):
        return self.H @ np.asarray(theta, dtype=float) + self.w

    def original(self, theta):
        return self.lower + self.scale * self.unit(theta)

    def free_coordinates(self, lam):
        """Recover ``theta`` from an original-unit point of the polytope."""
        return np.asarray(lam, dtype=float)[: self.n_free].copy()


def polytope_affine_map(B, c, lower, upper, cond_limit=1e12) -> AffineMap:
    """Build ``H`` and ``w`` for ``{B lam = c, lower <= lam <= upper}``.

    ``B`` is split as ``[B1 | B2]`` with ``B2`` square over the last ``p - n``
    columns; those coordinates are eliminated. Raises :class:`DomainError` if
    ``B2`` is singular or badly conditioned, or if either block is empty.
    """
    lo, hi = as_bounds(lower, upper)
    p = lo.shape[0]
    B = as_matrix(B, "B", (None, p))
    c = as_vector(c, "c", B.shape[0])
    n_dep = B.shape[0]
    n_free = p - n_dep
    if n_dep < 1 or n_free < 1:
        raise DomainError("need at least one equality and at least one free coordinate")
    B1, B2 = B[:, :n_free], B[:, n_free:]
    if not np.isfinite(np.linalg.cond(B2)) or np.linalg.cond(B2) > cond_limit:
        raise DomainError("the trailing square block of B is singular")
    M = np.linalg.solve(B2, B1)
    scale = hi - lo
    H = np.vstack([np.eye(n_free), -M]) / scale[:, None]
    w = (np.concatenate([np.zeros(n_free), np.linalg.solve(B2, c)]) - lo) / scale
    return AffineMap(H=H, w=w, M=M, scale=scale, lower=lo, n_free=n_free)
