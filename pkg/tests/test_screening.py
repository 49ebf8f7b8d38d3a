import numpy as np
import pytest

from longvc.bspline import make_basis
from longvc.data import LongitudinalDataset, SampledFunction, empirical_norm_sq
from longvc.screening import (
    fit_marginal,
    keep_count_rule,
    mmms,
    screen,
    write_screen_csv,
)

from conftest import random_dataset


def marginal_oracle(dataset, k, basis):
    """Independent dense normal-equation solve of the marginal objective."""
    Bd = basis.eval(dataset.stacked_times)
    xk = dataset.stacked_x[:, k]
    D = np.column_stack([Bd, xk[:, None] * Bd])
    w = dataset.weights
    G = D.T @ (w[:, None] * D)
    rhs = D.T @ (w * dataset.stacked_y)
    return np.linalg.solve(G, rhs)


class TestFitMarginal:
    def test_matches_normal_equation_oracle(self):
        ds = random_dataset(n=20, m=5, p=4, seed=10)
        basis = make_basis(4, order=3)
        for k in range(ds.p):
            fit = fit_marginal(ds, k, basis)
            expect = marginal_oracle(ds, k, basis)
            np.testing.assert_allclose(fit.gamma1, expect[:4], atol=1e-10)
            np.testing.assert_allclose(fit.gamma2, expect[4:], atol=1e-10)

    def test_norm_recomputable_from_curve(self):
        ds = random_dataset(n=15, m=6, p=3, seed=11)
        basis = make_basis(5, order=3)
        fit = fit_marginal(ds, 1, basis)
        curve = SampledFunction(tuple(basis.eval(t) @ fit.gamma2 for t in ds.times))
        assert fit.norm_sq == pytest.approx(empirical_norm_sq(curve), abs=1e-10)

    def test_perfect_marginal_signal(self):
        # y identical to the covariate: slope curve ~ 1, residual ~ 0
        rng = np.random.default_rng(12)
        times, ys, xs = [], [], []
        for _ in range(25):
            t = np.sort(rng.uniform(0, 1, 8))
            x = rng.standard_normal((1, 8))
            times.append(t)
            xs.append(x)
            ys.append(x[0])
        ds = LongitudinalDataset(times, ys, xs)
        basis = make_basis(5, order=3)
        fit = fit_marginal(ds, 0, basis)
        assert fit.norm_sq == pytest.approx(1.0, abs=1e-6)
        slope_at = basis.eval(np.linspace(0, 1, 11)) @ fit.gamma2
        np.testing.assert_allclose(slope_at, 1.0, atol=1e-6)

    def test_zero_covariate_degenerate(self):
        ds = random_dataset(n=10, m=4, p=2, seed=13)
        zeroed = LongitudinalDataset(
            ds.times, ds.y,
            [np.vstack([np.zeros(X.shape[1]), X[1]]) for X in ds.covariates],
        )
        fit = fit_marginal(zeroed, 0, make_basis(4))
        assert fit.degenerate
        assert fit.norm_sq == 0.0

    def test_residual_orthogonal_to_regressors(self):
        ds = random_dataset(n=12, m=5, p=2, seed=14)
        basis = make_basis(4)
        fit = fit_marginal(ds, 0, basis)
        Bd = basis.eval(ds.stacked_times)
        D = np.column_stack([Bd, ds.stacked_x[:, [0]] * Bd])
        resid = ds.stacked_y - D @ np.concatenate([fit.gamma1, fit.gamma2])
        inner = D.T @ (ds.weights * resid)
        assert np.max(np.abs(inner)) < 1e-9

    def test_index_out_of_range(self):
        ds = random_dataset(p=2)
        with pytest.raises(IndexError):
            fit_marginal(ds, 5, make_basis(4))


class TestScreen:
    def test_keep_count_rule(self):
        assert keep_count_rule(100) == 21
        assert keep_count_rule(200) == 37
        assert keep_count_rule(100, p=3) == 3

    def test_ranking_matches_marginal_fits(self):
        ds = random_dataset(n=15, m=5, p=6, seed=15)
        basis = make_basis(4)
        res = screen(ds, basis)
        norms = np.array([fit_marginal(ds, k, basis).norm_sq for k in range(ds.p)])
        np.testing.assert_allclose(res.norms, norms[res.ranked], atol=1e-12)
        assert np.all(np.diff(res.norms) <= 1e-15)

    def test_scale_equivariance(self):
        ds = random_dataset(n=12, m=4, p=5, seed=16)
        basis = make_basis(4)
        scaled = LongitudinalDataset(ds.times, [3.0 * y for y in ds.y], ds.covariates)
        r1 = screen(ds, basis)
        r2 = screen(scaled, basis)
        np.testing.assert_array_equal(r1.ranked, r2.ranked)
        np.testing.assert_allclose(r2.norms, 9.0 * r1.norms, rtol=1e-9)

    def test_duplicate_covariate_ties_by_index(self):
        ds = random_dataset(n=10, m=4, p=3, seed=17)
        dup = LongitudinalDataset(
            ds.times, ds.y,
            [np.vstack([X, X[1]]) for X in ds.covariates],  # x4 duplicates x2
        )
        res = screen(dup, make_basis(4))
        i1 = list(res.ranked).index(1)
        i4 = list(res.ranked).index(3)
        assert res.norms[i1] == res.norms[i4]
        assert i1 < i4  # ascending-index tie break

    def test_small_p_clamped(self):
        ds = random_dataset(n=100, m=3, p=3, seed=18)
        res = screen(ds, make_basis(4))
        assert res.keep_count == 3
        assert set(res.kept) == {0, 1, 2}

    def test_threshold_mode(self):
        ds = random_dataset(n=10, m=4, p=4, seed=19)
        res = screen(ds, make_basis(4), threshold=0.0)
        assert res.keep_count == 4

    def test_csv_export(self, tmp_path):
        ds = random_dataset(n=10, m=4, p=3, seed=20)
        res = screen(ds, make_basis(4), keep_count=2)
        out = tmp_path / "screen.csv"
        write_screen_csv(res, out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "rank,covariate,norm_sq,kept"
        assert len(lines) == 4
        assert lines[1].endswith(",1") and lines[3].endswith(",0")


class TestMmms:
    def test_prefix_scan(self):
        assert mmms([2, 0, 1], [0, 2]) == 2

    def test_best_case(self):
        assert mmms([4, 1, 3, 0, 2], [4, 1, 3]) == 3

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            mmms([0, 1], [5])

    def test_empty_truth(self):
        with pytest.raises(ValueError):
            mmms([0, 1], [])
