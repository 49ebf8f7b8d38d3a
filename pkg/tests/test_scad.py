import numpy as np
import pytest

from longvc.bspline import make_basis
from longvc.data import LongitudinalDataset
from longvc.exceptions import NumericError
from longvc.scad import (
    GscadProblem,
    ScadConfig,
    bic_path,
    classify_structure,
    default_lambda_grid,
    fit_group_scad,
    fit_unpenalized,
    model_dimension,
    scad_derivative,
    scad_penalty,
)

from conftest import random_dataset


class TestPenalty:
    def test_zero(self):
        assert scad_penalty(0.0, 1.0) == 0.0

    def test_closed_form_pieces(self):
        assert scad_penalty(1.0, 1.0, 3.7) == pytest.approx(1.0)
        assert scad_penalty(10.0, 1.0, 3.7) == pytest.approx(4.7 / 2)

    def test_continuity_at_breakpoints(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            lam = rng.uniform(0.01, 5.0)
            a0 = rng.uniform(2.1, 8.0)
            # evaluate both adjoining pieces at each breakpoint
            lin = lam * lam
            mid_at_lam = -(lam**2 - 2 * a0 * lam * lam + lam**2) / (2 * (a0 - 1))
            assert abs(lin - mid_at_lam) < 1e-14 * max(1.0, lin)
            u = a0 * lam
            mid_at_a0 = -(u**2 - 2 * a0 * lam * u + lam**2) / (2 * (a0 - 1))
            flat = (a0 + 1) * lam**2 / 2
            assert abs(mid_at_a0 - flat) < 1e-13 * max(1.0, flat)
            assert scad_penalty(lam, lam, a0) == pytest.approx(lin, rel=1e-14)
            assert scad_penalty(u, lam, a0) == pytest.approx(flat, rel=1e-14)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            scad_penalty(-0.1, 1.0)

    def test_vectorized(self):
        u = np.array([0.0, 0.5, 2.0, 10.0])
        v = scad_penalty(u, 1.0, 3.7)
        assert v.shape == (4,)
        assert np.all(np.diff(v) >= 0)


class TestDerivative:
    def test_pieces(self):
        assert scad_derivative(0.5, 1.0, 3.7) == pytest.approx(1.0)
        assert scad_derivative(2 * 3.7, 1.0, 3.7) == 0.0

    def test_finite_difference(self):
        rng = np.random.default_rng(1)
        lam, a0 = 0.8, 3.7
        h = 1e-6
        count = 0
        while count < 100:
            u = rng.uniform(0.01, 4.0)
            # keep away from the two breakpoints where p is not differentiable
            if min(abs(u - lam), abs(u - a0 * lam)) < 10 * h:
                continue
            count += 1
            fd = (scad_penalty(u + h, lam, a0) - scad_penalty(u - h, lam, a0)) / (2 * h)
            assert abs(scad_derivative(u, lam, a0) - fd) < 1e-6


def spline_model_dataset(n=30, m=5, q=2, L=4, noise=0.0, seed=2, p=None):
    """Data generated exactly from spline coefficient curves."""
    rng = np.random.default_rng(seed)
    basis = make_basis(L, order=3)
    p = q if p is None else p
    coefs = rng.uniform(-2, 2, size=(q + 1, L))
    times, ys, xs = [], [], []
    for _ in range(n):
        t = np.sort(rng.uniform(0, 1, m))
        V = basis.eval(t)
        X = rng.standard_normal((p, m))
        y = V @ coefs[0]
        for j in range(q):
            y = y + (V @ coefs[j + 1]) * X[j]
        y = y + noise * rng.standard_normal(m)
        times.append(t)
        ys.append(y)
        xs.append(X)
    return LongitudinalDataset(times, ys, xs), basis, coefs


class TestUnpenalized:
    def test_noiseless_recovery(self):
        ds, basis, coefs = spline_model_dataset(noise=0.0)
        fit = fit_unpenalized(ds, basis, range(2))
        np.testing.assert_allclose(fit, coefs, atol=1e-8)

    def test_matches_dense_oracle(self):
        ds, basis, _ = spline_model_dataset(n=30, m=4, q=3, L=4, noise=0.5, seed=3)
        fit = fit_unpenalized(ds, basis, range(3))
        Bd = basis.eval(ds.stacked_times)
        D = np.hstack([Bd] + [ds.stacked_x[:, [k]] * Bd for k in range(3)])
        w = ds.weights
        oracle = np.linalg.solve(D.T @ (w[:, None] * D), D.T @ (w * ds.stacked_y))
        np.testing.assert_allclose(fit.ravel(), oracle, atol=1e-10)

    def test_empty_active_is_intercept_only(self):
        ds, basis, _ = spline_model_dataset(q=2, noise=0.3, seed=4)
        fit = fit_unpenalized(ds, basis, [])
        assert fit.shape == (1, basis.L)
        Bd = basis.eval(ds.stacked_times)
        w = ds.weights
        oracle = np.linalg.solve(Bd.T @ (w[:, None] * Bd), Bd.T @ (w * ds.stacked_y))
        np.testing.assert_allclose(fit[0], oracle, atol=1e-10)

    def test_dimension_guard(self):
        ds = random_dataset(n=2, m=2, p=5, seed=5)
        with pytest.raises(NumericError, match="screen"):
            fit_unpenalized(ds, make_basis(4), range(5))


def structured_dataset(n=60, m=8, seed=6, noise=0.3, p=6):
    """Three real covariates (one constant, one varying, one null) plus
    spares; intercept curve present."""
    rng = np.random.default_rng(seed)
    times, ys, xs = [], [], []
    for _ in range(n):
        t = np.sort(rng.uniform(0, 1, m))
        X = rng.standard_normal((p, m))
        y = (
            np.sin(2 * np.pi * t)
            + 2.0 * X[0]
            + (1.5 * np.cos(np.pi * t)) * X[1]
            + noise * rng.standard_normal(m)
        )
        times.append(t)
        ys.append(y)
        xs.append(X)
    return LongitudinalDataset(times, ys, xs)


class TestGroupScad:
    def test_lambda_zero_equals_unpenalized(self):
        ds, basis, _ = spline_model_dataset(n=25, m=5, q=3, L=4, noise=0.4, seed=7)
        fit = fit_group_scad(ds, basis, ScadConfig(0.0, 0.0), range(3))
        assert fit.converged
        unpen = fit_unpenalized(ds, basis, range(3))
        fitted_b = np.vstack([fit.coef_b(j) for j in range(4)])
        np.testing.assert_allclose(fitted_b, unpen, atol=1e-8)

    def test_huge_lambda_gives_intercept_only(self):
        ds = structured_dataset()
        basis = make_basis(5)
        scale = float(np.std(ds.stacked_y))
        fit = fit_group_scad(ds, basis, ScadConfig(10 * scale, 10 * scale), range(ds.p))
        assert fit.structure.zero == tuple(range(ds.p))
        assert fit.structure.selected == ()
        np.testing.assert_array_equal(fit.coef_centered[1:], 0.0)
        intercept_only = fit_unpenalized(ds, basis, [])
        np.testing.assert_allclose(fit.coef_b(0), intercept_only[0], atol=1e-8)

    def test_descent_trace(self):
        ds = structured_dataset(seed=8)
        basis = make_basis(5)
        scale = float(np.std(ds.stacked_y))
        for lam in [0.01 * scale, 0.05 * scale, 0.2 * scale]:
            fit = fit_group_scad(ds, basis, ScadConfig(lam, lam), range(ds.p))
            diffs = np.diff(fit.objective_trace)
            assert np.all(diffs <= 1e-10), f"ascent at lam={lam}: {diffs.max()}"

    def test_trace_is_exact_objective(self):
        ds = structured_dataset(seed=9)
        basis = make_basis(4)
        problem = GscadProblem(ds, basis, range(ds.p))
        cfg = ScadConfig(0.05, 0.05).resolved(problem.response_scale)
        fit = problem.solve_lqa(cfg)
        recomputed = problem.objective(fit.coef_centered.ravel(), cfg)
        assert fit.objective_trace[-1] == pytest.approx(recomputed, rel=1e-12)

    def test_penalty_norm_two_ways(self):
        # coordinate quadratic form vs direct quadrature of the curve
        ds = structured_dataset(seed=10)
        basis = make_basis(5)
        fit = fit_group_scad(ds, basis, ScadConfig(0.02, 0.02), range(ds.p))
        nodes, wq = basis.quadrature()
        for j in range(1, len(fit.active) + 1):
            d = fit.coef_centered[j, 1:]
            form = basis.centered.fun_norm_sq(d)
            curve = fit.curve(j, nodes)
            c = fit.coef_centered[j, 0]
            direct = wq @ (curve - c) ** 2
            assert abs(form - direct) < 1e-10

    def test_clamped_groups_stay_zero(self):
        ds = structured_dataset(seed=11)
        basis = make_basis(4)
        scale = float(np.std(ds.stacked_y))
        fit = fit_group_scad(ds, basis, ScadConfig(0.3 * scale, 0.3 * scale), range(ds.p))
        for k in fit.structure.zero:
            block = fit.active.index(k) + 1
            np.testing.assert_array_equal(fit.coef_centered[block], 0.0)

    def test_stationarity_at_convergence(self):
        # small penalty: nothing clamps, so the fixed point must satisfy the
        # weighted normal equations built from its own weights
        ds = structured_dataset(seed=12, noise=0.2)
        basis = make_basis(4)
        problem = GscadProblem(ds, basis, range(3))
        cfg = ScadConfig(1e-3, 1e-3, conv_tol=1e-10).resolved(problem.response_scale)
        fit = problem.solve_lqa(cfg)
        assert fit.converged
        theta = fit.coef_centered.ravel()
        # no clamping happened
        assert not fit.structure.zero
        resid = problem.gram @ theta - problem.rhs
        blocks = problem.blocks
        for k in range(1, blocks.q + 1):
            c = theta[blocks.c_col(k)]
            wc = scad_derivative(abs(c), cfg.lam1, cfg.a0) / max(abs(c), cfg.lqa_eps)
            resid[blocks.c_col(k)] += 0.5 * wc * c
            d = theta[blocks.f_cols(k)]
            fn = np.sqrt(d @ problem.fun_gram @ d)
            wf = scad_derivative(fn, cfg.lam2, cfg.a0) / max(fn, cfg.lqa_eps)
            resid[blocks.f_cols(k)] += 0.5 * wf * (problem.fun_gram @ d)
        rel = np.linalg.norm(resid) / np.linalg.norm(problem.rhs)
        assert rel < 1e-6

    def test_structure_identification(self):
        ds = structured_dataset(n=100, m=10, seed=13, noise=0.3)
        basis = make_basis(5)
        path = bic_path(ds, basis, range(ds.p))
        st = path.best_fit.structure
        assert 0 in st.constant
        assert 1 in st.varying
        assert set(st.selected) == {0, 1}
        cval = dict(zip(st.constant, st.constant_values))
        assert cval[0] == pytest.approx(2.0, abs=0.2)

    def test_permutation_invariance(self):
        ds = structured_dataset(seed=14)
        basis = make_basis(4)
        cfg = ScadConfig(0.05, 0.05)
        f1 = fit_group_scad(ds, basis, cfg, [0, 1, 2])
        f2 = fit_group_scad(ds, basis, cfg, [2, 0, 1])
        np.testing.assert_allclose(f1.coef_centered[1], f2.coef_centered[2], atol=1e-9)
        np.testing.assert_allclose(f1.coef_centered[3], f2.coef_centered[1], atol=1e-9)
        assert set(f1.structure.varying) == set(f2.structure.varying)

    def test_partition_invariant(self):
        ds = structured_dataset(seed=15)
        fit = fit_group_scad(ds, make_basis(4), ScadConfig(0.1, 0.1), range(ds.p))
        st = fit.structure
        all_idx = sorted(st.zero + st.constant + st.varying)
        assert all_idx == list(range(ds.p))


class TestClassify:
    def _fit_with_blocks(self, rows, basis):
        ds = structured_dataset(n=20, m=5, seed=16, p=len(rows))
        fit = fit_group_scad(ds, basis, ScadConfig(0.0, 0.0), range(len(rows)))
        fit.coef_centered = np.vstack([np.zeros(basis.L)] + rows)
        return fit

    def test_explicit_cases(self):
        basis = make_basis(4)
        zero_row = np.zeros(basis.L)
        const_row = np.r_[5.0, np.zeros(basis.L - 1)]
        varying_row = np.r_[0.0, 0.5 * np.ones(basis.L - 1)]
        fit = self._fit_with_blocks([zero_row, const_row, varying_row], basis)
        st = classify_structure(fit, zero_tol=1e-8)
        assert st.zero == (0,)
        assert st.constant == (1,) and st.constant_values == (5.0,)
        assert st.varying == (2,)  # zero level, nonzero variation -> curve


class TestBicPath:
    def test_single_lambda(self):
        ds = structured_dataset(seed=17)
        basis = make_basis(4)
        path = bic_path(ds, basis, range(3), lam_grid=[0.07])
        assert path.best_lam == 0.07
        assert len(path.fits) == 1
        fit = path.fits[0]
        expected = ds.N * fit.resid_norm_sq + model_dimension(
            fit.structure, basis.L
        ) * np.log(ds.N)
        assert path.bics[0] == pytest.approx(expected, rel=1e-12)

    def test_noise_prefers_sparse(self):
        rng = np.random.default_rng(18)
        times = [np.sort(rng.uniform(0, 1, 6)) for _ in range(40)]
        ys = [rng.standard_normal(6) for _ in range(40)]
        xs = [rng.standard_normal((4, 6)) for _ in range(40)]
        ds = LongitudinalDataset(times, ys, xs)
        scale = float(np.std(ds.stacked_y))
        path = bic_path(ds, make_basis(4), range(4), lam_grid=[0.0, 10 * scale])
        assert path.best_lam == 10 * scale
        assert path.best_fit.structure.selected == ()

    def test_tie_breaks_to_larger_lambda(self):
        ds = structured_dataset(seed=19)
        scale = float(np.std(ds.stacked_y))
        path = bic_path(ds, make_basis(4), range(3), lam_grid=[10 * scale, 20 * scale])
        assert path.bics[0] == path.bics[1]
        assert path.best_lam == 20 * scale

    def test_default_grid_shape(self):
        ds = structured_dataset(seed=20)
        grid = default_lambda_grid(ds)
        assert grid.size == 30
        scale = float(np.std(ds.stacked_y))
        assert grid[0] == pytest.approx(1e-3 * scale)
        assert grid[-1] == pytest.approx(scale)
