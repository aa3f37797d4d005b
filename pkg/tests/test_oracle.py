"""Reference solvers and first-order checks used to grade the main solvers."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog, minimize

from emopt import Box, Polyhedron, QuadraticObjective, Simplex
from emopt._errors import DimensionError, DomainError, OracleBudgetError, UnboundedProblemError
from emopt.oracle import (
    finite_diff_grad,
    grid_search_min,
    kkt_residual,
    lp_vertex_enum,
    majorization_probe,
    projected_gradient,
    qp_active_set_enum,
    simplex_lattice,
)
from instances import random_bounded_lp, random_convex_qp_ineq, random_polynomial, random_spd

seeds = st.integers(min_value=0, max_value=2**32 - 1)


class TestSimplexLattice:
    """Stars-and-bars enumeration."""

    def test_small_case(self):
        points = simplex_lattice(2, 2)
        np.testing.assert_allclose(points, [[0, 1], [0.5, 0.5], [1, 0]])

    @given(st.integers(min_value=1, max_value=4), st.integers(min_value=1, max_value=12))
    def test_count_and_membership(self, dim, res):
        points = simplex_lattice(dim, res)
        assert points.shape == (math.comb(res + dim - 1, dim - 1), dim)
        np.testing.assert_allclose(points.sum(axis=1), 1.0)
        assert np.all(points >= 0)
        assert len({tuple(np.round(p * res).astype(int)) for p in points}) == points.shape[0]

    def test_invalid(self):
        with pytest.raises(ValueError):
            simplex_lattice(0, 3)


class TestGridSearch:
    """Exhaustive lattice minimum."""

    def test_box_minimum(self):
        best, val = grid_search_min(lambda x: ((x - 0.3) ** 2).sum(axis=1), Box([0, 0], [1, 1]), 11)
        np.testing.assert_allclose(best, [0.3, 0.3])
        assert val == pytest.approx(0.0, abs=1e-20)

    def test_refinement_sharpens_interior_minimum(self):
        F = lambda x: ((x - 0.123456) ** 2).sum(axis=1)  # noqa: E731
        coarse, _ = grid_search_min(F, Box([0], [1]), 11)
        fine, _ = grid_search_min(F, Box([0], [1]), 11, refine=4)
        assert abs(fine[0] - 0.123456) < abs(coarse[0] - 0.123456)
        assert abs(fine[0] - 0.123456) <= 1e-5

    def test_simplex_minimum(self):
        best, _ = grid_search_min(lambda x: (x**2).sum(axis=1), Simplex(3), 30)
        np.testing.assert_allclose(best, [1 / 3] * 3, atol=1 / 30)

    def test_simplex_refinement_stays_on_the_simplex(self):
        best, _ = grid_search_min(lambda x: ((x - [0.21, 0.79]) ** 2).sum(axis=1), Simplex(2), 10, refine=3)
        assert best.sum() == pytest.approx(1.0) and best[0] == pytest.approx(0.21, abs=1e-3)

    def test_finds_the_lowest_lattice_value(self, rng):
        poly = random_polynomial(rng, 2)
        best, val = grid_search_min(poly, Box([0, 0], [1, 1]), 41)
        axis = np.linspace(0, 1, 41)
        brute = min(poly(np.array([a, b])) for a in axis for b in axis)
        assert val == pytest.approx(brute, abs=1e-12) and poly(best) == pytest.approx(val)

    def test_budget(self):
        with pytest.raises(OracleBudgetError):
            grid_search_min(lambda x: x.sum(axis=1), Box([0] * 4, [1] * 4), 100, budget=10**7)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            grid_search_min(lambda x: x.sum(axis=1), Box([0], [1]), 1)

    def test_unsupported_domain(self):
        with pytest.raises(DomainError):
            grid_search_min(lambda x: x.sum(axis=1), Polyhedron([[1.0]], [1.0]), 5)


class TestProjectedGradient:
    """First-order reference on boxes and halfspaces."""

    def test_unconstrained(self, rng):
        Q = random_spd(rng, 3)
        b = rng.standard_normal(3)
        np.testing.assert_allclose(projected_gradient(QuadraticObjective(Q, b)), np.linalg.solve(Q, -b), atol=1e-9)

    def test_box_clips(self):
        x = projected_gradient(QuadraticObjective(np.eye(2), [-2.0, 0.5]), Box([-1, -1], [1, 1]))
        np.testing.assert_allclose(x, [1.0, -0.5], atol=1e-12)

    def test_halfspace(self):
        x = projected_gradient(QuadraticObjective(np.eye(2), [-2.0, -2.0]), Polyhedron([[1.0], [1.0]], [1.0]))
        np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-10)

    def test_matches_bounded_minimizer(self, rng):
        Q = random_spd(rng, 3)
        b = 3 * rng.standard_normal(3)
        obj = QuadraticObjective(Q, b)
        x = projected_gradient(obj, Box([-1] * 3, [1] * 3))
        ref = minimize(obj, np.zeros(3), jac=obj.gradient, bounds=[(-1, 1)] * 3, method="L-BFGS-B", options={"gtol": 1e-12, "ftol": 1e-15})
        np.testing.assert_allclose(x, ref.x, atol=1e-5)

    def test_rejects_non_convex(self):
        with pytest.raises(DomainError):
            projected_gradient(QuadraticObjective(-np.eye(2), [0.0, 0.0]))

    def test_several_halfspaces_not_supported(self):
        with pytest.raises(NotImplementedError):
            projected_gradient(QuadraticObjective(np.eye(2), [0.0, 0.0]), Polyhedron(np.eye(2), [1.0, 1.0]))


class TestActiveSetEnumeration:
    """Exact strictly convex QP over a polyhedron."""

    def test_one_active_constraint(self):
        x, nu = qp_active_set_enum(QuadraticObjective([[1.0]], [-2.0]), [[1.0]], [1.0])
        assert x == pytest.approx([1.0]) and nu == pytest.approx([1.0])

    @given(seeds)
    def test_matches_sequential_quadratic_programming(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        quad, A, c = random_convex_qp_ineq(rng, dim, int(rng.integers(1, 6)))
        x, nu = qp_active_set_enum(quad, A, c)
        ref = minimize(
            quad,
            np.zeros(dim),
            jac=quad.gradient,
            constraints=[{"type": "ineq", "fun": lambda z: c - A.T @ z, "jac": lambda z: -A.T}],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        assert quad(x) <= quad(ref.x) + 1e-8
        np.testing.assert_allclose(x, ref.x, atol=1e-5)
        np.testing.assert_allclose(quad.gradient(x) + A @ nu, 0.0, atol=1e-8)
        assert np.all(nu >= 0)

    def test_infeasible(self):
        with pytest.raises(DomainError):
            qp_active_set_enum(QuadraticObjective([[1.0]], [0.0]), [[1.0, -1.0]], [0.0, -1.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            qp_active_set_enum(QuadraticObjective([[1.0]], [0.0]), [[1.0]], [1.0, 2.0])

    def test_budget(self):
        with pytest.raises(OracleBudgetError):
            qp_active_set_enum(QuadraticObjective(np.eye(5), np.zeros(5)), np.ones((5, 40)), np.ones(40), budget=1000)


class TestVertexEnumeration:
    """Exact LP maximum over a polyhedron."""

    def test_small_lp(self):
        x, value = lp_vertex_enum([[1.0, 1.0]], [1.0, 2.0], [1.0])
        assert x == pytest.approx([1.0]) and value == pytest.approx(1.0)

    @given(seeds)
    def test_matches_linprog(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 4))
        A, b, c = random_bounded_lp(rng, n, int(rng.integers(n + 1, 7)))
        _, value = lp_vertex_enum(A, c, b)
        ref = linprog(-b, A_ub=A.T, b_ub=c, bounds=[(None, None)] * n, method="highs")
        assert ref.status == 0
        assert value == pytest.approx(-ref.fun, abs=1e-8)

    def test_unbounded(self):
        with pytest.raises(UnboundedProblemError):
            lp_vertex_enum([[1.0, 1.0]], [1.0, 2.0], [-1.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            lp_vertex_enum([[1.0, 1.0]], [1.0], [1.0])


class TestKktResidual:
    """Multiplier fit on nearly active constraints."""

    def test_unconstrained_is_the_gradient_norm(self):
        report = kkt_residual(lambda t: np.array([3.0, 4.0]), np.zeros(2))
        assert report.residual == pytest.approx(5.0)

    def test_optimal_point(self):
        # min 0.5 (t - 2)^2 s.t. t <= 1: multiplier 1 at t = 1
        report = kkt_residual(lambda t: t - 2, np.array([1.0]), lambda t: t - 1, lambda t: np.ones((1, 1)))
        assert report.residual == pytest.approx(0.0, abs=1e-14)
        assert report.multipliers == pytest.approx([1.0])

    def test_wrong_sign_gradient_is_not_absorbed(self):
        report = kkt_residual(lambda t: t, np.array([1.0]), lambda t: t - 1, lambda t: np.ones((1, 1)))
        assert report.stationarity == pytest.approx(1.0) and report.multipliers == pytest.approx([0.0])

    def test_inactive_constraint_ignored(self):
        report = kkt_residual(lambda t: t - 2, np.array([0.0]), lambda t: t - 1, lambda t: np.ones((1, 1)))
        assert not report.active[0] and report.stationarity == pytest.approx(2.0)

    def test_violation_reported(self):
        report = kkt_residual(lambda t: 0 * t, np.array([1.5]), lambda t: t - 1, lambda t: np.ones((1, 1)))
        assert report.primal_violation == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            kkt_residual(lambda t: t, np.zeros(2), lambda t: t[:1], lambda t: np.ones((1, 3)))


class TestFiniteDifferences:
    """Central-difference gradients."""

    @given(seeds)
    def test_matches_polynomial_gradient(self, seed):
        rng = np.random.default_rng(seed)
        poly = random_polynomial(rng, 3)
        theta = rng.uniform(0.1, 0.9, 3)
        np.testing.assert_allclose(finite_diff_grad(poly, theta), poly.gradient(theta), atol=1e-6)

    def test_outside_the_domain(self):
        with pytest.raises(DomainError):
            finite_diff_grad(lambda t: float(np.log(t[0])) if t[0] > 0 else np.nan, np.array([0.0]))


class TestMajorizationProbe:
    """Sampled audit of ``u >= f`` with equality at the anchor."""

    def test_true_majorizer(self):
        f = lambda t: float(np.cos(t[0]))  # noqa: E731
        u = lambda t, a: float(np.cos(a[0]) - np.sin(a[0]) * (t[0] - a[0]) + 0.5 * (t[0] - a[0]) ** 2)  # noqa: E731
        sampler = lambda r: (r.uniform(-3, 3, 1), r.uniform(-3, 3, 1))  # noqa: E731
        min_gap, anchor_gap = majorization_probe(u, f, sampler, 500)
        assert min_gap >= -1e-12 and anchor_gap <= 1e-15

    def test_detects_a_minorizer(self):
        f = lambda t: float(t[0] ** 2)  # noqa: E731
        u = lambda t, a: float(a[0] ** 2 + 2 * a[0] * (t[0] - a[0]))  # noqa: E731
        sampler = lambda r: (r.uniform(-1, 1, 1), r.uniform(-1, 1, 1))  # noqa: E731
        min_gap, _ = majorization_probe(u, f, sampler, 50)
        assert min_gap < 0

    def test_seeded(self):
        f = lambda t: float(t[0])  # noqa: E731
        u = lambda t, a: float(t[0] + (t[0] - a[0]) ** 2)  # noqa: E731
        sampler = lambda r: (r.uniform(0, 1, 1), r.uniform(0, 1, 1))  # noqa: E731
        assert majorization_probe(u, f, sampler, 20, seed=3) == majorization_probe(u, f, sampler, 20, seed=3)
