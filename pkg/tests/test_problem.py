"""Polynomial evaluation, unit-box rebasing, K bounds and coordinate maps."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emopt import Box, MonomialTerm, PolynomialObjective, QuadraticObjective, Simplex
from emopt._errors import BoundViolationError, DimensionError, DomainError
from emopt.oracle import finite_diff_grad, simplex_lattice
from emopt.problem import (
    barrier_objective,
    default_slack,
    k_bound_simplex,
    polytope_affine_map,
    rebase_to_unit_box,
    simplex_reduce,
)
from instances import random_polynomial

seeds = st.integers(min_value=0, max_value=2**32 - 1)


class TestPolynomialEvaluation:
    """Values and gradients of sparse polynomials."""

    def test_mixed_monomials(self):
        poly = PolynomialObjective([2.0, -3.0], [[2, 1], [0, 1]])
        assert poly([1.0, 2.0]) == pytest.approx(-2.0, abs=1e-15)

    def test_zero_to_the_zero_is_one(self):
        poly = PolynomialObjective([1.0], [[2]])
        assert poly([0.0]) == 0.0
        constant = PolynomialObjective([0.25], [[0]])
        assert constant([0.0]) == 0.25
        assert constant([7.0]) == 0.25

    def test_square_gradient(self):
        poly = PolynomialObjective([1.0], [[2]])
        assert poly.gradient([0.5]) == pytest.approx([1.0])

    def test_cross_term_gradient(self):
        poly = PolynomialObjective([1.0], [[1, 1]])
        np.testing.assert_allclose(poly.gradient([2.0, 3.0]), [3.0, 2.0])

    def test_constant_has_zero_gradient(self):
        poly = PolynomialObjective([4.0], [[0, 0]])
        np.testing.assert_array_equal(poly.gradient([0.3, 0.0]), [0.0, 0.0])

    def test_batch_matches_pointwise(self, rng):
        poly = random_polynomial(rng, 3)
        pts = rng.uniform(-1, 1, (7, 3))
        np.testing.assert_allclose(poly(pts), [poly(x) for x in pts], rtol=1e-14)
        np.testing.assert_allclose(poly.gradient(pts), [poly.gradient(x) for x in pts], rtol=1e-14)

    def test_canonical_form_merges_and_drops(self):
        poly = PolynomialObjective([1.0, 2.0, -3.0, 0.0], [[1, 0], [1, 0], [0, 1], [2, 2]])
        assert poly.terms == [MonomialTerm(-3.0, (0, 1)), MonomialTerm(3.0, (1, 0))]

    def test_cancelled_polynomial_keeps_dimension(self):
        poly = PolynomialObjective([1.0, -1.0], [[1, 1], [1, 1]])
        assert poly.dim == 2 and poly([5.0, 5.0]) == 0.0

    def test_from_terms_round_trip(self, rng):
        poly = random_polynomial(rng, 2)
        assert PolynomialObjective.from_terms(poly.terms) == poly

    def test_degrees(self):
        poly = PolynomialObjective([1.0, 1.0], [[2, 1], [0, 3]])
        np.testing.assert_array_equal(poly.degrees, [2, 3])
        assert poly.total_degree == 3

    @pytest.mark.parametrize(
        "coefs, exps, error",
        [
            ([1.0], [[-1]], ValueError),
            ([1.0], [[0.5]], ValueError),
            ([np.nan], [[1]], ValueError),
            ([1.0, 2.0], [[1]], DimensionError),
            ([], np.zeros((0, 1)), ValueError),
        ],
    )
    def test_rejects_malformed_input(self, coefs, exps, error):
        with pytest.raises(error):
            PolynomialObjective(coefs, exps)

    def test_wrong_point_dimension(self):
        with pytest.raises(DimensionError):
            PolynomialObjective([1.0], [[1, 1]])([1.0])

    @given(seeds)
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        poly = random_polynomial(rng, dim)
        x = rng.uniform(-1.5, 1.5, dim)
        np.testing.assert_allclose(poly.gradient(x), finite_diff_grad(poly, x), atol=1e-6)


class TestQuadraticObjective:
    """The quadratic form and its expansion into monomials."""

    def test_value_and_gradient(self):
        quad = QuadraticObjective([[2.0, 1.0], [1.0, 4.0]], [1.0, -1.0])
        x = np.array([0.5, -1.0])
        assert quad(x) == pytest.approx(0.5 * (0.5 - 1.0 + 4.0) + 0.5 + 1.0)
        np.testing.assert_allclose(quad.gradient(x), [1.0, -4.5])

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            QuadraticObjective([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])

    @given(seeds)
    def test_polynomial_expansion_agrees(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        M = rng.standard_normal((dim, dim))
        quad = QuadraticObjective(M + M.T, rng.standard_normal(dim))
        poly = quad.to_polynomial()
        x = rng.standard_normal(dim)
        assert poly(x) == pytest.approx(quad(x), rel=1e-12, abs=1e-12)


class TestRebase:
    """Moving a polynomial onto the unit box and bounding it there."""

    def test_square_on_symmetric_interval(self):
        rebased = rebase_to_unit_box(PolynomialObjective([1.0], [[2]]), [-1.0], [1.0], delta=0.0)
        # lam = 2 t - 1 gives 4 t^2 - 4 t + 1; exponent rows are sorted (t, t^2)
        np.testing.assert_allclose(rebased.tilde.coefs, [-4.0, 4.0])
        assert rebased.tilde_const == pytest.approx(1.0)
        assert rebased.K == pytest.approx(5.0)
        np.testing.assert_array_equal(rebased.degrees, [2])

    def test_shifted_square_on_unit_interval(self):
        poly = PolynomialObjective([1.0, -1.0, 0.25], [[2], [1], [0]])
        assert rebase_to_unit_box(poly, [0.0], [1.0], delta=0.0).K == pytest.approx(1.25)
        assert rebase_to_unit_box(poly, [0.0], [1.0], delta=0.1).K == pytest.approx(1.35)

    def test_default_slack(self):
        poly = PolynomialObjective([1.0, -1.0, 0.25], [[2], [1], [0]])
        rebased = rebase_to_unit_box(poly, [0.0], [1.0])
        assert rebased.slack == pytest.approx(default_slack(1.25))
        assert rebased.K == pytest.approx(1.25 * (1 + 1e-6))

    def test_explicit_k_is_kept(self):
        poly = PolynomialObjective([1.0], [[2]])
        rebased = rebase_to_unit_box(poly, [0.0], [1.0], K=0.5)
        assert rebased.K == 0.5 and rebased.slack == pytest.approx(-0.5)

    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError):
            rebase_to_unit_box(PolynomialObjective([1.0], [[2]]), [0.0], [1.0], delta=-1.0)

    def test_empty_box_rejected(self):
        with pytest.raises(DomainError):
            rebase_to_unit_box(PolynomialObjective([1.0], [[2]]), [1.0], [1.0])

    @given(seeds)
    def test_rebased_value_equals_original(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        poly = random_polynomial(rng, dim)
        lo = rng.uniform(-2, 0, dim)
        hi = lo + rng.uniform(0.2, 3, dim)
        rebased = rebase_to_unit_box(poly, lo, hi)
        theta = rng.uniform(0, 1, dim)
        lam = rebased.to_original(theta)
        assert rebased.value(theta) == pytest.approx(poly(lam), rel=1e-10, abs=1e-10)
        np.testing.assert_allclose(rebased.to_unit(lam), theta, atol=1e-12)

    @given(seeds)
    def test_bound_dominates_lattice(self, seed):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 4))
        poly = random_polynomial(rng, dim)
        delta = float(rng.uniform(0.01, 1.0))
        rebased = rebase_to_unit_box(poly, -np.ones(dim), np.ones(dim), delta=delta)
        axes = np.meshgrid(*[np.linspace(0, 1, 11)] * dim, indexing="ij")
        pts = np.stack([a.ravel() for a in axes], axis=1)
        assert np.min(rebased.K - rebased.tilde(pts) - rebased.tilde_const) >= delta / 2


class TestBarrier:
    """The transformed objective ``-ln(K - F)``."""

    def setup_method(self):
        poly = PolynomialObjective([1.0, -1.0, 0.25], [[2], [1], [0]])
        self.rebased = rebase_to_unit_box(poly, [0.0], [1.0], delta=0.0)

    def test_stationary_at_minimum(self):
        value, grad = barrier_objective(self.rebased, [0.5])
        assert value == pytest.approx(-np.log(1.25))
        assert grad == pytest.approx([0.0])

    def test_gradient_off_minimum(self):
        _, grad = barrier_objective(self.rebased, [0.25])
        assert grad == pytest.approx([-0.5 / 1.1875], rel=1e-14)

    def test_violated_bound(self):
        bad = rebase_to_unit_box(PolynomialObjective([1.0], [[1]]), [0.0], [1.0], K=0.5)
        with pytest.raises(BoundViolationError):
            barrier_objective(bad, [0.75])


class TestSimplexBound:
    """Upper bound of a polynomial on the probability simplex."""

    def test_sum_of_squares(self):
        poly = PolynomialObjective([1.0, 1.0], [[2, 0], [0, 2]])
        assert k_bound_simplex(poly, delta=0.0) == pytest.approx(2.0)
        assert k_bound_simplex(poly, delta=0.5) == pytest.approx(2.5)

    def test_negative_linear(self):
        poly = PolynomialObjective([-1.0], [[1, 0]])
        assert k_bound_simplex(poly, delta=0.3) == pytest.approx(0.3)

    @given(seeds)
    def test_bound_dominates_lattice(self, seed):
        rng = np.random.default_rng(seed)
        poly = random_polynomial(rng, 3)
        delta = float(rng.uniform(0.01, 1.0))
        K = k_bound_simplex(poly, delta)
        assert np.min(K - poly(simplex_lattice(3, 30))) >= delta / 2


class TestSimplexReduction:
    """Eliminating the last simplex coordinate."""

    def test_value(self):
        reduced, lift = simplex_reduce(PolynomialObjective([1.0, 1.0], [[2, 0], [0, 2]]))
        assert reduced([0.25]) == pytest.approx(0.625)
        np.testing.assert_allclose(lift([0.25]), [0.25, 0.75])

    def test_one_coordinate_rejected(self):
        with pytest.raises(DomainError):
            simplex_reduce(PolynomialObjective([1.0], [[1]]))

    @given(seeds)
    def test_reduced_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        reduced, _ = simplex_reduce(random_polynomial(rng, 3))
        theta = rng.dirichlet(np.ones(3))[:2]
        np.testing.assert_allclose(reduced.gradient(theta), finite_diff_grad(reduced, theta), atol=1e-6)


class TestPolytopeMap:
    """Free-coordinate parametrisation of ``{B lam = c, l <= lam <= u}``."""

    def test_segment(self):
        amap = polytope_affine_map([[1.0, 1.0]], [1.0], [0.0, 0.0], [1.0, 1.0])
        np.testing.assert_allclose(amap.H, [[1.0], [-1.0]])
        np.testing.assert_allclose(amap.w, [0.0, 1.0])

    def test_no_free_coordinates_rejected(self):
        with pytest.raises(DomainError):
            polytope_affine_map(np.eye(2), [0.5, 0.5], [0.0, 0.0], [1.0, 1.0])

    def test_singular_block_rejected(self):
        with pytest.raises(DomainError):
            polytope_affine_map([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]], [1.0, 1.0], np.zeros(3), np.ones(3))

    @given(seeds)
    def test_points_satisfy_equalities(self, seed):
        rng = np.random.default_rng(seed)
        p = int(rng.integers(2, 5))
        n_dep = int(rng.integers(1, p))
        B = rng.standard_normal((n_dep, p))
        lo = rng.uniform(-1, 0, p)
        hi = lo + rng.uniform(0.5, 2, p)
        c = B @ rng.uniform(lo, hi)
        amap = polytope_affine_map(B, c, lo, hi)
        theta = rng.standard_normal(p - n_dep)
        lam = amap.original(theta)
        assert np.max(np.abs(B @ lam - c)) <= 1e-10 * (1 + np.max(np.abs(c)))
        np.testing.assert_allclose(amap.free_coordinates(lam), theta, atol=1e-12)


class TestDomains:
    """Feasible-set descriptions validate their inputs."""

    def test_box_bounds_must_be_ordered(self):
        with pytest.raises(DomainError):
            Box([0.0, 1.0], [1.0, 1.0])

    def test_simplex_needs_two_coordinates(self):
        with pytest.raises(DomainError):
            Simplex(1)
