import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from longvc.bspline import default_dimension, decompose, make_basis


def cox_de_boor(knots, j, order, t):
    """Independent textbook recursion for a single B-spline value.

    order here means degree + 1. The last interval is treated as closed so
    the basis still sums to one at the right endpoint.
    """
    if order == 1:
        if knots[j] <= t < knots[j + 1]:
            return 1.0
        if t == knots[-1] and knots[j] < knots[j + 1] == knots[-1]:
            return 1.0
        return 0.0
    val = 0.0
    denom = knots[j + order - 1] - knots[j]
    if denom > 0:
        val += (t - knots[j]) / denom * cox_de_boor(knots, j, order - 1, t)
    denom = knots[j + order] - knots[j + 1]
    if denom > 0:
        val += (knots[j + order] - t) / denom * cox_de_boor(knots, j + 1, order - 1, t)
    return val


class TestConstruction:
    def test_bernstein_case(self):
        b = make_basis(3, order=3)
        np.testing.assert_allclose(b.eval(0.0), [1.0, 0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(b.eval(0.5), [0.25, 0.5, 0.25], atol=1e-15)

    def test_interior_knots_equispaced(self):
        b = make_basis(8, order=3)
        np.testing.assert_allclose(b.knots[3:8], np.arange(1, 6) / 6)

    def test_dimension_below_order_rejected(self):
        with pytest.raises(ValueError):
            make_basis(2, order=3)

    def test_eval_outside_domain_rejected(self):
        b = make_basis(5)
        with pytest.raises(ValueError):
            b.eval(np.array([0.2, 1.0001]))

    def test_default_dimension_rule(self):
        assert default_dimension(100) == 6
        assert default_dimension(2, order=3) == 3  # clamped below
        assert default_dimension(10**9) == 15  # clamped above


class TestEvaluation:
    def test_matches_recursion_oracle(self):
        b = make_basis(8, order=3)
        rng = np.random.default_rng(0)
        ts = np.concatenate([rng.uniform(0, 1, 1000), [0.0, 1.0], b.knots[3:8]])
        V = b.eval(ts)
        for j in range(b.L):
            expect = np.array([cox_de_boor(b.knots, j, b.order, t) for t in ts])
            np.testing.assert_allclose(V[:, j], expect, atol=1e-12)

    def test_matches_recursion_oracle_other_orders(self):
        for L, order in [(4, 4), (6, 2), (5, 1)]:
            b = make_basis(L, order=order)
            ts = np.linspace(0, 1, 37)
            V = b.eval(ts)
            for j in range(b.L):
                expect = np.array([cox_de_boor(b.knots, j, b.order, t) for t in ts])
                np.testing.assert_allclose(V[:, j], expect, atol=1e-12, err_msg=f"L={L} order={order}")

    def test_partition_of_unity(self):
        rng = np.random.default_rng(1)
        ts = np.concatenate([rng.uniform(0, 1, 10000), [0.0, 1.0]])
        for L, order in [(6, 3), (8, 3), (10, 4)]:
            V = make_basis(L, order).eval(ts)
            assert np.max(np.abs(V.sum(axis=1) - 1.0)) < 1e-12
            assert V.min() >= 0.0

    def test_local_support(self):
        b = make_basis(8, order=3)
        V = b.eval(np.random.default_rng(2).uniform(0, 1, 200))
        assert np.max((V > 0).sum(axis=1)) <= b.order

    def test_polynomial_reproduction(self):
        # least-squares projection recovers polynomials of degree < order
        b = make_basis(9, order=3)
        ts = np.linspace(0, 1, 400)
        V = b.eval(ts)
        for poly in [np.ones_like(ts), ts, 1.5 - 2.0 * ts + 0.75 * ts**2]:
            coef, *_ = np.linalg.lstsq(V, poly, rcond=None)
            assert np.max(np.abs(V @ coef - poly)) < 1e-9


class TestIntegrals:
    def test_bernstein_integrals(self):
        np.testing.assert_allclose(make_basis(3, 3).integrals, [1 / 3, 1 / 3, 1 / 3], atol=1e-14)

    def test_sum_to_one(self):
        for L, order in [(6, 3), (12, 3), (7, 5)]:
            assert abs(make_basis(L, order).integrals.sum() - 1.0) < 1e-12

    def test_against_adaptive_quadrature_oracle(self):
        b = make_basis(8, order=3)
        for j in range(b.L):
            val, _ = quad(lambda t, j=j: b.eval(np.array([t]))[0, j], 0, 1,
                          points=b.breaks.tolist(), limit=200)
            assert abs(b.integrals[j] - val) < 1e-12

    def test_gram_against_quadrature_oracle(self):
        b = make_basis(6, order=3)
        for i, j in [(0, 0), (1, 2), (3, 3), (2, 5)]:
            val, _ = quad(
                lambda t: b.eval(np.array([t]))[0, i] * b.eval(np.array([t]))[0, j],
                0, 1, points=b.breaks.tolist(), limit=200,
            )
            assert abs(b.gram[i, j] - val) < 1e-12


class TestDecompose:
    def test_constant_function(self):
        b = make_basis(7, order=3)
        c, d = decompose(b, 5.0 * np.ones(b.L))
        assert c == pytest.approx(5.0, abs=1e-12)
        np.testing.assert_allclose(d, 0.0, atol=1e-12)

    def test_linear_function(self):
        # Greville abscissae give the coefficients of g(t) = t
        b = make_basis(8, order=3)
        greville = np.array(
            [b.knots[j + 1 : j + b.order].mean() for j in range(b.L)]
        )
        ts = np.linspace(0, 1, 101)
        np.testing.assert_allclose(b.eval(ts) @ greville, ts, atol=1e-12)
        c, d = decompose(b, greville)
        assert c == pytest.approx(0.5, abs=1e-12)
        # reconstruction reproduces the original coefficients
        np.testing.assert_allclose(b.centered.merge(c, d), greville, atol=1e-12)

    def test_reconstruction_pointwise(self):
        b = make_basis(6, order=3)
        rng = np.random.default_rng(4)
        gamma = rng.standard_normal(b.L)
        c, d = decompose(b, gamma)
        ts = np.linspace(0, 1, 57)
        # evaluate c + sum_j d_j C_{j+1}(t) directly from the definition
        V = b.eval(ts)
        cvals = V[:, 1:] - b.integrals[1:][None, :]
        np.testing.assert_allclose(c + cvals @ d, V @ gamma, atol=1e-12)

    def test_functional_part_integrates_to_zero(self):
        b = make_basis(9, order=4)
        rng = np.random.default_rng(5)
        for _ in range(5):
            gamma = rng.standard_normal(b.L)
            c, d = decompose(b, gamma)
            resid = gamma - b.centered.merge(0.0, d) + 0.0
            # integral of the functional part = integral of g minus c
            fun_integral = b.integrals @ b.centered.merge(0.0, d)
            assert abs(fun_integral) < 1e-12
            assert abs(b.integrals @ gamma - c) < 1e-12
            del resid

    def test_pythagoras_against_quadrature_oracle(self):
        b = make_basis(7, order=3)
        rng = np.random.default_rng(6)
        for _ in range(5):
            gamma = rng.standard_normal(b.L)
            c, d = decompose(b, gamma)

            def g(t):
                return float(b.eval(np.array([t]))[0] @ gamma)

            total, _ = quad(lambda t: g(t) ** 2, 0, 1, points=b.breaks.tolist(), limit=200)
            fun, _ = quad(lambda t: (g(t) - c) ** 2, 0, 1, points=b.breaks.tolist(), limit=200)
            assert abs(total - (c**2 + fun)) < 1e-10
            assert abs(b.l2_norm_sq(gamma) - total) < 1e-10
            assert abs(b.centered.fun_norm_sq(d) - fun) < 1e-10

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_decompose_linear_in_coefficients(self, seed):
        b = make_basis(6, order=3)
        rng = np.random.default_rng(seed)
        g1 = rng.standard_normal(b.L)
        g2 = rng.standard_normal(b.L)
        a, bb = rng.uniform(-3, 3, 2)
        c1, d1 = decompose(b, g1)
        c2, d2 = decompose(b, g2)
        c, d = decompose(b, a * g1 + bb * g2)
        assert c == pytest.approx(a * c1 + bb * c2, rel=1e-10, abs=1e-10)
        np.testing.assert_allclose(d, a * d1 + bb * d2, atol=1e-10)

    def test_length_mismatch(self):
        b = make_basis(5)
        with pytest.raises(ValueError):
            decompose(b, np.ones(4))
