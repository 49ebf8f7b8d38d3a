import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longvc.data import (
    LongitudinalDataset,
    SampledFunction,
    empirical_inner,
    empirical_norm_sq,
    load_long_csv,
    write_long_csv,
)
from longvc.exceptions import DataError

from conftest import random_dataset


def brute_force_inner(u_vals, v_vals):
    """Independent double-loop evaluation of the defining sum."""
    n = len(u_vals)
    total = 0.0
    for ui, vi in zip(u_vals, v_vals):
        mi = len(ui)
        s = 0.0
        for j in range(mi):
            s += ui[j] * vi[j]
        total += s / mi
    return total / n


class TestEmpiricalInner:
    def test_constant_one_has_unit_norm(self, toy_dataset):
        one = SampledFunction.constant(toy_dataset, 1.0)
        assert empirical_inner(one, one) == pytest.approx(1.0, abs=1e-15)

    def test_hand_example(self):
        u = SampledFunction((np.array([2.0]), np.array([1.0, 3.0])))
        v = SampledFunction((np.array([1.0]), np.array([1.0, 1.0])))
        # (1/2) * (2/1 + 4/2) = 2
        assert empirical_inner(u, v) == pytest.approx(2.0, abs=1e-15)

    def test_disjoint_support(self):
        u = SampledFunction((np.array([1.0, 2.0]), np.zeros(3)))
        v = SampledFunction((np.zeros(2), np.array([5.0, 6.0, 7.0])))
        assert empirical_inner(u, v) == 0.0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        m = [3, 5, 2]
        u = SampledFunction(tuple(rng.standard_normal(mi) for mi in m))
        v = SampledFunction(tuple(rng.standard_normal(mi) for mi in m))
        expect = brute_force_inner(u.values, v.values)
        assert empirical_inner(u, v) == pytest.approx(expect, abs=1e-14)

    def test_vector_valued_transpose_symmetry(self):
        rng = np.random.default_rng(3)
        m = [4, 2, 6]
        u = SampledFunction(tuple(rng.standard_normal((2, mi)) for mi in m))
        v = SampledFunction(tuple(rng.standard_normal((3, mi)) for mi in m))
        A = empirical_inner(u, v)
        B = empirical_inner(v, u)
        assert A.shape == (2, 3)
        np.testing.assert_allclose(A, B.T, atol=1e-14)

    def test_bilinearity(self):
        rng = np.random.default_rng(7)
        m = [3, 3]
        u1 = SampledFunction(tuple(rng.standard_normal(mi) for mi in m))
        u2 = SampledFunction(tuple(rng.standard_normal(mi) for mi in m))
        v = SampledFunction(tuple(rng.standard_normal(mi) for mi in m))
        comb = SampledFunction(tuple(2.0 * a + 3.0 * b for a, b in zip(u1.values, u2.values)))
        lhs = empirical_inner(comb, v)
        rhs = 2.0 * empirical_inner(u1, v) + 3.0 * empirical_inner(u2, v)
        assert lhs == pytest.approx(rhs, abs=1e-13)

    def test_shape_mismatch_rejected(self):
        u = SampledFunction((np.zeros(2), np.zeros(3)))
        v = SampledFunction((np.zeros(2), np.zeros(4)))
        with pytest.raises(DataError):
            empirical_inner(u, v)

    @given(alpha=st.floats(-10, 10, allow_nan=False))
    @settings(max_examples=25, deadline=None)
    def test_norm_scale_equivariance(self, alpha):
        rng = np.random.default_rng(11)
        u = SampledFunction(tuple(rng.standard_normal(mi) for mi in [2, 4, 3]))
        au = SampledFunction(tuple(alpha * x for x in u.values))
        assert empirical_norm_sq(au) == pytest.approx(alpha**2 * empirical_norm_sq(u), rel=1e-12, abs=1e-12)


class TestNormSq:
    def test_zero(self, toy_dataset):
        z = SampledFunction.constant(toy_dataset, 0.0)
        assert empirical_norm_sq(z) == 0.0

    def test_constant(self, toy_dataset):
        c = SampledFunction.constant(toy_dataset, -2.5)
        assert empirical_norm_sq(c) == pytest.approx(6.25, abs=1e-14)

    def test_rejects_vector_valued(self):
        u = SampledFunction((np.zeros((2, 3)),))
        with pytest.raises(DataError):
            empirical_norm_sq(u)


class TestDatasetValidation:
    def test_time_bounds(self):
        with pytest.raises(DataError, match="\\[0, 1\\]"):
            LongitudinalDataset([[0.0, 1.2]], [[1.0, 2.0]], [np.zeros((1, 2))])

    def test_unsorted_times(self):
        with pytest.raises(DataError, match="nondecreasing"):
            LongitudinalDataset([[0.5, 0.2]], [[1.0, 2.0]], [np.zeros((1, 2))])

    def test_covariate_shape(self):
        with pytest.raises(DataError, match="p x m_i"):
            LongitudinalDataset([[0.0, 0.5]], [[1.0, 2.0]], [np.zeros((1, 3))])

    def test_duplicate_names(self):
        with pytest.raises(DataError, match="unique"):
            LongitudinalDataset([[0.0]], [[1.0]], [np.zeros((2, 1))], names=["a", "a"])

    def test_stacked_views(self):
        ds = random_dataset(n=3, m=[2, 3, 1], p=2, seed=5)
        assert ds.N == 6
        np.testing.assert_array_equal(ds.subject_of, [0, 0, 1, 1, 1, 2])
        np.testing.assert_allclose(
            ds.weights, [1 / 6, 1 / 6, 1 / 9, 1 / 9, 1 / 9, 1 / 3]
        )
        np.testing.assert_array_equal(ds.stacked_x[2:5], ds.covariates[1].T)


class TestCsv:
    def test_basic_load(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text(
            "subject,time,y,x1,x2\n"
            "a,0.0,1.0,0.1,0.2\n"
            "a,0.5,2.0,0.3,0.4\n"
            "a,1.0,3.0,0.5,0.6\n"
            "b,0.0,4.0,0.7,0.8\n"
            "b,0.5,5.0,0.9,1.0\n"
            "b,1.0,6.0,1.1,1.2\n"
        )
        ds = load_long_csv(f)
        assert ds.n == 2 and tuple(ds.m) == (3, 3) and ds.N == 6 and ds.p == 2
        assert ds.subject_ids == ("a", "b")

    def test_rows_grouped_and_sorted(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text(
            "subject,time,y,x1\n"
            "b,0.9,1.0,0.0\n"
            "a,0.5,2.0,0.0\n"
            "b,0.1,3.0,0.0\n"
            "a,0.2,4.0,0.0\n"
        )
        ds = load_long_csv(f)
        assert ds.subject_ids == ("b", "a")
        np.testing.assert_allclose(ds.times[0], [0.1, 0.9])
        np.testing.assert_allclose(ds.y[0], [3.0, 1.0])
        np.testing.assert_allclose(ds.y[1], [4.0, 2.0])

    def test_normalization(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("subject,time,y,x1\n1,0,1,0\n1,9,2,0\n1,18,3,0\n")
        ds = load_long_csv(f, normalize_times=True)
        np.testing.assert_allclose(ds.times[0], [0.0, 0.5, 1.0])

    def test_time_out_of_bounds_names_row(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("subject,time,y,x1\n1,0.5,1,0\n1,1.2,2,0\n")
        with pytest.raises(DataError, match="row 3"):
            load_long_csv(f)

    def test_non_numeric_names_row_and_column(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("subject,time,y,x1\n1,0.5,oops,0\n")
        with pytest.raises(DataError, match="row 2.*'y'"):
            load_long_csv(f)

    def test_missing_columns(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("subject,time\n1,0.5\n")
        with pytest.raises(DataError, match="header"):
            load_long_csv(f)

    def test_field_count_mismatch(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("subject,time,y,x1\n1,0.5,1.0\n")
        with pytest.raises(DataError, match="row 2"):
            load_long_csv(f)

    def test_round_trip_bit_identical(self, tmp_path):
        ds = random_dataset(n=4, m=[3, 1, 5, 2], p=3, seed=9)
        f = tmp_path / "out.csv"
        write_long_csv(ds, f)
        back = load_long_csv(f)
        assert back.subject_ids == ds.subject_ids
        assert back.names == ds.names
        for i in range(ds.n):
            np.testing.assert_array_equal(back.times[i], ds.times[i])
            np.testing.assert_array_equal(back.y[i], ds.y[i])
            np.testing.assert_array_equal(back.covariates[i], ds.covariates[i])
