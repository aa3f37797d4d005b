"""Exponential-family surrogates behind every solver.

Each family couples an objective ``f`` with a parametric distribution
``p(x; theta)`` and a positive weight ``G`` such that ``E_p[G(X)] = exp(-f)``.
The tilted distribution ``q`` at an anchor ``theta_bar`` has a closed-form mean
``E_q[gamma(X)]`` and the surrogate is

    u(theta | theta_bar) = -E_q[gamma]' (eta(theta) - eta(theta_bar))
                           + A(theta) - A(theta_bar) + f(theta_bar),

which lies above ``f`` and touches it at the anchor. Surrogates are written
in that generic form on purpose: tests compare them against the closed-form
gap identities rather than against a copy of the same algebra.
"""

from __future__ import annotations

import numpy as np

from ._errors import BoundViolationError, DimensionError, DomainError, NotPositiveDefiniteError
from ._validation import as_matrix, as_sigma, as_vector
from .numerics import is_spd_dominated, stacked_newton_direction
from .problem import AffineMap, QuadraticObjective, RebasedProblem, ReducedSimplexPolynomial

__all__ = [
    "FAMILY_TAGS",
    "NormalFamily",
    "BinomialFamily",
    "MultinomialFamily",
    "ShiftedBinomialFamily",
    "PoissonNormalFamily",
    "DualPoissonFamily",
    "normal_weight",
    "expectation_q_binomial",
]

FAMILY_TAGS = ("normal", "binomial", "multinomial", "poisson", "poisson+normal")


def _xlogratio(weight, new, old):
    """``weight * log(new / old)`` with the ``0 * log(...) = 0`` convention."""
    weight = np.asarray(weight, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = weight * (np.log(new) - np.log(old))
    return np.where(weight == 0.0, 0.0, out)


def normal_weight(x, sigma, sigma_inv, Q, linear):
    """Weight ``G`` whose mean under ``N(theta, sigma)`` is ``exp(-q(theta))``.

    ``q(theta) = 0.5 theta' Q theta + linear' theta``. With
    ``D = sigma_inv - Q`` (positive definite),
    ``Q~ = sigma_inv D^{-1} sigma_inv - sigma_inv`` and
    ``b~ = sigma_inv D^{-1} linear``, the weight is
    ``sqrt(|sigma| |Q~ + sigma_inv|) exp(-0.5 linear' D^{-1} linear - 0.5 x' Q~ x - b~' x)``.
    The constant ``exp(-0.5 linear' D^{-1} linear)`` cancels the term that
    completing the square leaves behind; it does not depend on ``theta``, so
    the tilted distribution and every surrogate are the same without it.
    ``x`` may be a single point or a batch of rows.
    """
    D = sigma_inv - Q
    D_inv = np.linalg.inv(D)
    q_tilde = sigma_inv @ D_inv @ sigma_inv - sigma_inv
    b_tilde = sigma_inv @ D_inv @ linear
    log_const = 0.5 * (np.linalg.slogdet(sigma)[1] + np.linalg.slogdet(q_tilde + sigma_inv)[1])
    log_const -= 0.5 * linear @ D_inv @ linear
    x = np.atleast_2d(np.asarray(x, dtype=float))
    expo = -0.5 * np.einsum("ni,ij,nj->n", x, q_tilde, x) - x @ b_tilde
    return np.exp(log_const + expo)


def expectation_q_binomial(lam_bar, degrees, grad_phi):
    """Tilted binomial mean ``lam (m - (1 - lam) * dphi/dlam)`` per coordinate."""
    lam_bar = np.asarray(lam_bar, dtype=float)
    return lam_bar * (np.asarray(degrees, dtype=float) - (1.0 - lam_bar) * np.asarray(grad_phi, dtype=float))


class NormalFamily:
    """Unconstrained quadratic ``f`` paired with ``N(theta, sigma)``."""

    tag = "normal"

    def __init__(self, objective: QuadraticObjective, sigma):
        self.objective_fn = objective
        self.dim = objective.dim
        self.sigma, self.sigma_inv = as_sigma(sigma, self.dim)
        if not is_spd_dominated(self.sigma_inv, objective.Q):
            raise NotPositiveDefiniteError("sigma^{-1} - Q must be positive definite")

    def objective(self, theta):
        return self.objective_fn(theta)

    def gradient(self, theta):
        return self.objective_fn.gradient(theta)

    def is_interior(self, theta):
        return bool(np.all(np.isfinite(theta)))

    def natural_parameter(self, theta):
        return self.sigma_inv @ theta

    def log_partition(self, theta):
        return 0.5 * theta @ self.sigma_inv @ theta

    def expectation_q(self, anchor):
        return anchor - self.sigma @ self.gradient(anchor)

    def inverse_fisher(self, theta=None):
        return self.sigma

    def natural_step(self, theta):
        return theta - self.inverse_fisher(theta) @ self.gradient(theta)

    def surrogate(self, theta, anchor):
        theta = np.asarray(theta, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        mean_q = self.expectation_q(anchor)
        return float(
            -mean_q @ (self.natural_parameter(theta) - self.natural_parameter(anchor))
            + self.log_partition(theta)
            - self.log_partition(anchor)
            + self.objective(anchor)
        )

    def weight(self, x):
        obj = self.objective_fn
        return normal_weight(x, self.sigma, self.sigma_inv, obj.Q, obj.b)


class BinomialFamily:
    """Polynomial on the unit box paired with independent binomials.

    Coordinate ``j`` uses ``Binomial(m_j, theta_j)``; coordinates the
    polynomial does not depend on (``m_j = 0``) get a zero step.
    """

    tag = "binomial"

    def __init__(self, problem: RebasedProblem):
        self.problem = problem
        self.dim = problem.dim
        self.degrees = problem.degrees.astype(float)

    def objective(self, theta):
        gap = self.problem.K - self.problem.value(theta)
        if not gap > 0:
            raise BoundViolationError(f"K - F(theta) = {gap:.3e} is not positive")
        return float(-np.log(gap))

    def gradient(self, theta):
        gap = self.problem.K - self.problem.value(theta)
        if not gap > 0:
            raise BoundViolationError(f"K - F(theta) = {gap:.3e} is not positive")
        return self.problem.tilde.gradient(theta) / gap

    def is_interior(self, theta):
        theta = np.asarray(theta)
        return bool(np.all(theta > 0) and np.all(theta < 1))

    def margin(self, theta):
        return float(np.min(np.minimum(theta, 1.0 - theta)))

    def expectation_q(self, anchor):
        return expectation_q_binomial(anchor, self.degrees, self.gradient(anchor))

    def inverse_fisher(self, theta):
        theta = np.asarray(theta, dtype=float)
        m = self.degrees
        with np.errstate(divide="ignore", invalid="ignore"):
            diag = np.where(m > 0, theta * (1.0 - theta) / np.where(m > 0, m, 1.0), 0.0)
        return np.diag(diag)

    def natural_step(self, theta):
        return theta - self.inverse_fisher(theta) @ self.gradient(theta)

    def paired_step(self, state):
        """The natural step on ``state = (theta, 1 - theta)`` stacked.

        Both halves move by positive factors,
        ``theta <- theta (1 - rest g / m)`` and ``rest <- rest (1 + theta g / m)``,
        and are renormalized to sum to one. Keeping ``rest`` as its own
        variable preserves its relative precision when ``theta`` approaches
        one, where ``1 - theta`` would round to zero.
        """
        state = np.asarray(state, dtype=float)
        theta, rest = state[: self.dim], state[self.dim :]
        m = self.degrees
        rate = np.where(m > 0, self.gradient(theta) / np.where(m > 0, m, 1), 0.0)
        new_theta = theta * (1.0 - rest * rate)
        new_rest = rest * (1.0 + theta * rate)
        total = new_theta + new_rest
        return np.concatenate([new_theta / total, new_rest / total])

    def surrogate(self, theta, anchor):
        theta = np.asarray(theta, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        mean_q = self.expectation_q(anchor)
        rest = self.degrees - mean_q
        value = -np.sum(_xlogratio(mean_q, theta, anchor) + _xlogratio(rest, 1.0 - theta, 1.0 - anchor))
        return float(value + self.objective(anchor))

    def weight(self, x):
        """``K - (sum_i a~_i prod_j g_ij(x_j) + b~)`` for integer count vectors ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        poly = self.problem.tilde
        ratios = np.ones((x.shape[0], poly.coefs.shape[0]))
        for j in range(self.dim):
            m_j = int(self.problem.degrees[j])
            for i, n in enumerate(poly.exps[:, j]):
                for k in range(int(n)):
                    ratios[:, i] *= (x[:, j] - k) / (m_j - k)
        return self.problem.K - (ratios @ poly.coefs + self.problem.tilde_const)


class MultinomialFamily:
    """Polynomial on the simplex paired with a multinomial of ``m`` trials.

    ``theta`` holds the first ``p - 1`` probabilities; the last one is
    ``1 - sum(theta)``.
    """

    tag = "multinomial"

    def __init__(self, reduced: ReducedSimplexPolynomial, K: float, trials: int):
        if trials < 1:
            raise ValueError("the number of trials must be at least one")
        self.reduced = reduced
        self.K = float(K)
        self.trials = int(trials)
        self.dim = reduced.dim

    def _gap(self, theta):
        gap = self.K - self.reduced(theta)
        if not gap > 0:
            raise BoundViolationError(f"K - F(theta) = {gap:.3e} is not positive")
        return gap

    def objective(self, theta):
        return float(-np.log(self._gap(theta)))

    def gradient(self, theta):
        return self.reduced.gradient(theta) / self._gap(theta)

    def is_interior(self, theta):
        theta = np.asarray(theta)
        return bool(np.all(theta > 0) and 1.0 - theta.sum() > 0)

    def margin(self, theta):
        return float(min(np.min(theta), 1.0 - np.sum(theta)))

    def expectation_q(self, anchor):
        grad = self.gradient(anchor)
        centred = grad - anchor @ grad
        return self.trials * anchor - anchor * centred

    def inverse_fisher(self, theta):
        theta = np.asarray(theta, dtype=float)
        return (np.diag(theta) - np.outer(theta, theta)) / self.trials

    def eta_jacobian(self, theta):
        """Jacobian of ``eta_k = log(theta_k / (1 - sum(theta)))``."""
        theta = np.asarray(theta, dtype=float)
        last = 1.0 - theta.sum()
        return np.diag(1.0 / theta) + 1.0 / last

    def natural_step(self, theta):
        return theta - self.inverse_fisher(theta) @ self.gradient(theta)

    def multiplicative_step(self, lam):
        """The natural step applied to the full point ``lam`` (length ``p``).

        Writing the step as ``lam_k <- lam_k (1 - (g_k - lam' g) / m)`` with
        ``g_p = 0`` for the eliminated coordinate gives the same iterate as
        :meth:`natural_step`, but every coordinate, including the last,
        is updated by a positive factor. The last coordinate is never
        recomputed as ``1 - sum(theta)``, which loses all its digits once it
        is near zero.
        """
        lam = np.asarray(lam, dtype=float)
        theta = lam[:-1]
        grad = self.gradient(theta)
        v = theta @ grad
        new = np.append(theta * (1.0 - (grad - v) / self.trials), lam[-1] * (1.0 + v / self.trials))
        return new / new.sum()

    def surrogate(self, theta, anchor):
        theta = np.asarray(theta, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        mean_q = self.expectation_q(anchor)
        rest = self.trials - mean_q.sum()
        value = -np.sum(_xlogratio(mean_q, theta, anchor)) - _xlogratio(rest, 1.0 - theta.sum(), 1.0 - anchor.sum())
        return float(value + self.objective(anchor))


class ShiftedBinomialFamily:
    """Polynomial on a polytope, parametrised through an affine map.

    ``lam = H theta + w`` lives in the unit box and coordinate ``j`` follows
    ``Binomial(m_j, lam_j)``. Degrees are raised to at least one so that every
    box constraint stays enforced by the surrogate.
    """

    tag = "binomial"

    def __init__(self, problem: RebasedProblem, amap: AffineMap):
        if amap.H.shape[0] != problem.dim:
            raise DimensionError("affine map and polynomial disagree on dimension")
        self.problem = problem
        self.amap = amap
        self.dim = amap.n_free
        self.degrees = np.maximum(problem.degrees, 1).astype(float)

    def lam(self, theta):
        return self.amap.unit(theta)

    def phi_gradient(self, lam):
        gap = self.problem.K - self.problem.value(lam)
        if not gap > 0:
            raise BoundViolationError(f"K - F(lam) = {gap:.3e} is not positive")
        return self.problem.tilde.gradient(lam) / gap

    def objective(self, theta):
        gap = self.problem.K - self.problem.value(self.lam(theta))
        if not gap > 0:
            raise BoundViolationError(f"K - F(lam) = {gap:.3e} is not positive")
        return float(-np.log(gap))

    def gradient(self, theta):
        return self.amap.H.T @ self.phi_gradient(self.lam(theta))

    def is_interior(self, theta):
        lam = self.lam(theta)
        return bool(np.all(lam > 0) and np.all(lam < 1))

    def margin(self, theta):
        lam = self.lam(theta)
        return float(np.min(np.minimum(lam, 1.0 - lam)))

    def expectation_q(self, anchor):
        lam_bar = self.lam(anchor)
        return expectation_q_binomial(lam_bar, self.degrees, self.phi_gradient(lam_bar))

    def surrogate(self, theta, anchor, mean_q=None):
        lam = self.lam(theta)
        lam_bar = self.lam(anchor)
        if mean_q is None:
            mean_q = self.expectation_q(anchor)
        rest = self.degrees - mean_q
        value = -np.sum(_xlogratio(mean_q, lam, lam_bar) + _xlogratio(rest, 1.0 - lam, 1.0 - lam_bar))
        return float(value + self.objective(anchor))

    def surrogate_gradient(self, theta, mean_q):
        lam = self.lam(theta)
        return self.amap.H.T @ (-mean_q / lam + (self.degrees - mean_q) / (1.0 - lam))

    def curvature_weights(self, theta, mean_q):
        """Diagonal ``1 / r_j`` of the surrogate Hessian in unit coordinates."""
        lam = self.lam(theta)
        return mean_q / lam**2 + (self.degrees - mean_q) / (1.0 - lam) ** 2

    def surrogate_hessian(self, theta, mean_q):
        H = self.amap.H
        return H.T @ (self.curvature_weights(theta, mean_q)[:, None] * H)


class PoissonNormalFamily:
    """Quadratic ``f`` under ``A' theta <= c`` with Poisson slacks and a normal part.

    The Poisson coordinates have means ``c - A' theta`` and a unit weight; the
    normal coordinates carry the quadratic through :func:`normal_weight`.
    """

    tag = "poisson+normal"

    def __init__(self, objective: QuadraticObjective, A, c, sigma):
        self.objective_fn = objective
        self.dim = objective.dim
        self.A = as_matrix(A, "A", (self.dim, None))
        self.c = as_vector(c, "c", self.A.shape[1])
        self.sigma, self.sigma_inv = as_sigma(sigma, self.dim)
        if not is_spd_dominated(self.sigma_inv, objective.Q):
            raise NotPositiveDefiniteError("sigma^{-1} - Q must be positive definite")

    def slack(self, theta):
        return self.c - self.A.T @ np.asarray(theta, dtype=float)

    def objective(self, theta):
        return self.objective_fn(theta)

    def gradient(self, theta):
        return self.objective_fn.gradient(theta)

    def is_interior(self, theta):
        return bool(np.all(self.slack(theta) > 0))

    def margin(self, theta):
        return float(np.min(self.slack(theta), initial=np.inf))

    def expectation_q(self, anchor):
        """``(Poisson means, normal mean)`` of the tilted distribution."""
        return self.slack(anchor), anchor - self.sigma @ self.gradient(anchor)

    def surrogate(self, theta, anchor, mean_q=None):
        theta = np.asarray(theta, dtype=float)
        anchor = np.asarray(anchor, dtype=float)
        if mean_q is None:
            mean_q = self.expectation_q(anchor)
        mu, mean_normal = mean_q
        y, y_bar = self.slack(theta), self.slack(anchor)
        poisson = -np.sum(_xlogratio(mu, y, y_bar)) + np.sum(y - y_bar)
        normal = (
            -mean_normal @ self.sigma_inv @ (theta - anchor)
            + 0.5 * theta @ self.sigma_inv @ theta
            - 0.5 * anchor @ self.sigma_inv @ anchor
        )
        return float(poisson + normal + self.objective(anchor))

    def surrogate_gradient(self, theta, mean_q):
        mu, mean_normal = mean_q
        y = self.slack(theta)
        return self.A @ (mu / y - 1.0) + self.sigma_inv @ (theta - mean_normal)

    def surrogate_hessian(self, theta, mean_q):
        mu, _ = mean_q
        y = self.slack(theta)
        return (self.A * (mu / y**2)) @ self.A.T + self.sigma_inv

    def newton_direction(self, theta, mean_q):
        """Newton step of the surrogate, solved in least-squares form."""
        mu, mean_normal = mean_q
        y = self.slack(theta)
        return stacked_newton_direction(
            self.A, mu / y**2, mu / y - 1.0, np.linalg.cholesky(self.sigma_inv), theta - mean_normal
        )

    def weight(self, x_poisson, x_normal):
        obj = self.objective_fn
        del x_poisson  # the Poisson block carries a unit weight
        return normal_weight(x_normal, self.sigma, self.sigma_inv, obj.Q, obj.b)


class DualPoissonFamily:
    """Scaled dual of a QP or LP with Poisson slacks.

    Variables are ``theta1`` (length n) and, when ``Q`` is present,
    ``theta2`` (length p), stacked into one vector. The objective is
    ``xi' (c - A' theta1) + 0.5 theta2' Q_hat theta2`` on
    ``lam = c - A' theta1 + Q theta2 > 0``, where ``xi`` and ``Q_hat`` are the
    scaled quantities from the dual setup.
    """

    def __init__(self, A, c, xi_hat, Q=None, Q_hat=None, sigma=None):
        self.A = as_matrix(A, "A")
        self.n = self.A.shape[0]
        self.p = self.A.shape[1]
        self.c = as_vector(c, "c", self.p)
        self.xi_hat = as_vector(xi_hat, "xi_hat", self.p)
        if np.any(self.xi_hat >= 1.0):
            raise DomainError("scaled primal point must stay below one")
        self.has_quadratic = Q is not None
        if self.has_quadratic:
            self.Q = np.asarray(Q, dtype=float)
            self.Q_hat = np.asarray(Q_hat, dtype=float)
            if sigma is None:
                raise ValueError("sigma is required when Q is present")
            self.sigma, self.sigma_inv = as_sigma(sigma, self.p)
            if not is_spd_dominated(self.sigma_inv, self.Q_hat):
                raise NotPositiveDefiniteError("sigma^{-1} - Q_hat must be positive definite")
            self.dim = self.n + self.p
        else:
            self.dim = self.n

    @property
    def tag(self):
        return "poisson+normal" if self.has_quadratic else "poisson"

    def split(self, z):
        z = np.asarray(z, dtype=float)
        return (z[: self.n], z[self.n :]) if self.has_quadratic else (z, None)

    def rates(self, z):
        t1, t2 = self.split(z)
        lam = self.c - self.A.T @ t1
        if self.has_quadratic:
            lam = lam + self.Q @ t2
        return lam

    def _rate_jacobian(self):
        """Rows: variables; columns: Poisson rates."""
        if self.has_quadratic:
            return np.vstack([-self.A, self.Q])
        return -self.A

    def objective(self, z):
        t1, t2 = self.split(z)
        value = self.xi_hat @ (self.c - self.A.T @ t1)
        if self.has_quadratic:
            value += 0.5 * t2 @ self.Q_hat @ t2
        return float(value)

    def gradient(self, z):
        t1, t2 = self.split(z)
        g1 = -self.A @ self.xi_hat
        if not self.has_quadratic:
            return g1
        return np.concatenate([g1, self.Q_hat @ t2])

    def _normal_linear(self):
        # The normal block carries 0.5 t2' Q_hat t2 - (Q xi_hat)' t2; the
        # remaining xi_hat' lam is produced by the Poisson weights.
        return -self.Q @ self.xi_hat

    def is_interior(self, z):
        return bool(np.all(self.rates(z) > 0))

    def margin(self, z):
        return float(np.min(self.rates(z)))

    def expectation_q(self, anchor):
        mu = (1.0 - self.xi_hat) * self.rates(anchor)
        if not self.has_quadratic:
            return mu, None
        _, t2 = self.split(anchor)
        grad_normal = self.Q_hat @ t2 + self._normal_linear()
        return mu, t2 - self.sigma @ grad_normal

    def surrogate(self, z, anchor, mean_q=None):
        if mean_q is None:
            mean_q = self.expectation_q(anchor)
        mu, mean_normal = mean_q
        lam, lam_bar = self.rates(z), self.rates(anchor)
        value = -np.sum(_xlogratio(mu, lam, lam_bar)) + np.sum(lam - lam_bar)
        if self.has_quadratic:
            _, t2 = self.split(z)
            _, t2_bar = self.split(anchor)
            value += (
                -mean_normal @ self.sigma_inv @ (t2 - t2_bar)
                + 0.5 * t2 @ self.sigma_inv @ t2
                - 0.5 * t2_bar @ self.sigma_inv @ t2_bar
            )
        return float(value + self.objective(anchor))

    def surrogate_gradient(self, z, mean_q):
        mu, mean_normal = mean_q
        lam = self.rates(z)
        grad = self._rate_jacobian() @ (1.0 - mu / lam)
        if self.has_quadratic:
            _, t2 = self.split(z)
            grad[self.n :] += self.sigma_inv @ (t2 - mean_normal)
        return grad

    def surrogate_hessian(self, z, mean_q):
        mu, _ = mean_q
        lam = self.rates(z)
        J = self._rate_jacobian()
        hess = (J * (mu / lam**2)) @ J.T
        if self.has_quadratic:
            hess[self.n :, self.n :] += self.sigma_inv
        return hess

    def newton_direction(self, z, mean_q):
        """Newton step of the surrogate, solved in least-squares form."""
        mu, mean_normal = mean_q
        lam = self.rates(z)
        root = rhs = None
        if self.has_quadratic:
            root = np.vstack([np.zeros((self.n, self.p)), np.linalg.cholesky(self.sigma_inv)])
            rhs = np.concatenate([np.zeros(self.n), self.split(z)[1] - mean_normal])
        return stacked_newton_direction(self._rate_jacobian(), mu / lam**2, 1.0 - mu / lam, root, rhs)

    def weight(self, x_poisson, x_normal=None):
        x_poisson = np.atleast_2d(np.asarray(x_poisson, dtype=float))
        w = np.exp(x_poisson @ np.log1p(-self.xi_hat))
        if self.has_quadratic:
            w = w * normal_weight(x_normal, self.sigma, self.sigma_inv, self.Q_hat, self._normal_linear())
        return w
