"""Synthetic longitudinal benchmarks and replication metrics.

Five generator cases share one backbone: covariates drawn fresh at every
observation with a sinusoidal variance profile and cross-component
correlation, a handful of nonzero coefficients that are constant or smooth
curves, and serially correlated Gaussian errors. The metric helpers
summarize selection and estimation quality across seeded replicates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import LongitudinalDataset
from .exceptions import ConfigError, DataError, NumericError

CASE_IDS = ("I", "II", "III", "IV", "V")

#: Key used for the intercept curve in estimation-metric mappings.
INTERCEPT = -1


def _curve_parabola(t):
    return 5.0 * (1.0 - t) ** 2


def _curve_bumps(t):
    t = np.asarray(t, dtype=float)
    return 3.5 * (np.exp(-((3.0 * t - 1.0) ** 2)) + np.exp(-((4.0 * t - 3.0) ** 2))) - 1.5


def _curve_sqrt(t):
    return 3.5 * np.sqrt(np.asarray(t, dtype=float))


def _curve_line(t):
    return 6.0 - 2.0 * np.asarray(t, dtype=float)


def _curve_cosine(t):
    return 2.0 - 3.0 * np.cos(4.0 * np.pi * np.asarray(t, dtype=float))


def _intercept(t):
    return 3.5 * np.sin(2.0 * np.pi * np.asarray(t, dtype=float))


_CASE_CONSTANTS = {
    "I": (5.0, -5.0),
    "II": (),
    "III": (5.0, -5.0, 2.5, -2.5, 1.0),
    "IV": (5.0, -5.0),
    "V": (5.0, -5.0),
}
_CASE_CURVES = {
    "I": (_curve_parabola, _curve_bumps, _curve_sqrt),
    "II": (_curve_parabola, _curve_bumps, _curve_sqrt, _curve_line, _curve_cosine),
    "III": (),
    "IV": (_curve_parabola, _curve_bumps, _curve_sqrt),
    "V": (_curve_parabola, _curve_bumps, _curve_sqrt),
}
_CASE_ERROR = {
    "I": (0.85, 0.5),
    "II": (0.85, 0.5),
    "III": (0.85, 0.5),
    "IV": (0.85, 0.6),
    "V": (0.95, 0.5),
}
_CASE_Z_FAMILY = {
    "I": "compound",
    "II": "compound",
    "III": "compound",
    "IV": "ar1",
    "V": "distance",
}


@dataclass(frozen=True)
class CaseSpec:
    """One benchmark configuration: sizes, correlation, and noise level.

    ``s1`` constant and ``s2`` varying coefficients occupy the first
    covariate slots, followed by ``s0`` spurious covariates correlated with
    them; everything past ``s1 + s2 + s0`` is independent noise.
    """

    case_id: str
    n: int
    m: int
    p: int
    rho: float
    s0: int
    s1: int
    s2: int
    constant_values: tuple
    omega: float
    r: float
    z_family: str

    @property
    def q0(self):
        """Size of the correlated leading block."""
        return self.s1 + self.s2 + self.s0

    @property
    def intercept(self) -> Callable:
        return _intercept

    @property
    def varying_functions(self) -> tuple:
        return _CASE_CURVES[self.case_id]


def make_case(case_id, n=100, m=20, p=500, rho=0.1, s0=10):
    """Build the CaseSpec for one of the five generator cases."""
    if case_id not in CASE_IDS:
        raise ConfigError(f"unknown case {case_id!r}; expected one of {CASE_IDS}")
    if min(n, m) < 1 or p < 1 or s0 < 0:
        raise ConfigError("n, m, p must be positive and s0 nonnegative")
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"correlation must lie in [0, 1), got {rho}")
    constants = _CASE_CONSTANTS[case_id]
    s1, s2 = len(constants), len(_CASE_CURVES[case_id])
    if s1 + s2 + s0 > p:
        raise ConfigError(
            f"p={p} too small for {s1} constant + {s2} varying + {s0} spurious covariates"
        )
    omega, r = _CASE_ERROR[case_id]
    return CaseSpec(
        case_id=case_id,
        n=int(n),
        m=int(m),
        p=int(p),
        rho=float(rho),
        s0=int(s0),
        s1=s1,
        s2=s2,
        constant_values=constants,
        omega=omega,
        r=r,
        z_family=_CASE_Z_FAMILY[case_id],
    )


@dataclass(frozen=True)
class TruthRecord:
    """True sparse structure underlying a generated dataset."""

    constant: tuple
    constant_values: tuple
    varying: tuple
    varying_functions: tuple
    spurious: tuple
    intercept: Callable

    @property
    def selected(self):
        """All truly nonzero covariate indices, constants first."""
        return self.constant + self.varying


def truth_record(spec):
    return TruthRecord(
        constant=tuple(range(spec.s1)),
        constant_values=spec.constant_values,
        varying=tuple(range(spec.s1, spec.s1 + spec.s2)),
        varying_functions=spec.varying_functions,
        spurious=tuple(range(spec.s1 + spec.s2, spec.q0)),
        intercept=spec.intercept,
    )


def _assert_psd(matrix, what):
    smallest = float(np.linalg.eigvalsh(matrix)[0])
    if smallest < -1e-10:
        raise ConfigError(f"{what} is not positive semidefinite (min eigenvalue {smallest:.3e})")


def correlation_matrix(spec):
    """Correlation of the leading q0 covariate loadings for this case."""
    q0, rho = spec.q0, spec.rho
    idx = np.arange(q0)
    dist = np.abs(idx[:, None] - idx[None, :])
    if spec.z_family == "compound":
        mat = np.full((q0, q0), rho)
        np.fill_diagonal(mat, 1.0)
    elif spec.z_family == "ar1":
        mat = rho**dist
    else:
        mat = dist / (2.0 * q0) + rho**dist.astype(float)
        _assert_psd(mat, "distance-plus-power correlation matrix")
    return mat


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def replicate_rng(master_seed, rep_index):
    """Independent stream for one replicate, reproducible in any order."""
    return np.random.default_rng(np.random.SeedSequence((int(master_seed), int(rep_index))))


def _correlation_root(spec):
    """Symmetric square root of the leading-block correlation, or None."""
    if spec.q0 == 0 or (spec.rho == 0.0 and spec.z_family != "distance"):
        return None
    mat = correlation_matrix(spec)
    vals, vecs = np.linalg.eigh(mat)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def component_draws(spec, size, seed):
    """Draw `size` iid covariate component vectors: (size, p).

    Rows are independent; within a row the leading q0 components follow
    correlation_matrix(spec) exactly (symmetric square root of the target,
    no jitter) and the rest are independent standard normals.
    """
    rng = _as_rng(seed)
    z = rng.standard_normal((int(size), spec.p))
    root = _correlation_root(spec)
    if root is not None:
        z[:, : spec.q0] = z[:, : spec.q0] @ root
    return z


def gen_covariates(spec, times, seed):
    """Covariate values for all subjects: list of (p, m_i) arrays.

    Every observation gets a fresh component draw scaled by
    sqrt(2)·sin(2π t), so pointwise variances follow 2 sin²(2π t), the
    cross-component correlation at any fixed time matches the case's
    correlation matrix, and values at distinct observation times are
    independent. Within one stream, subjects consume draws in order.
    """
    rng = _as_rng(seed)
    root = _correlation_root(spec)
    q0 = spec.q0
    out = []
    for t in times:
        t = np.asarray(t, dtype=float)
        z = rng.standard_normal((t.size, spec.p))
        if root is not None:
            z[:, :q0] = z[:, :q0] @ root
        shape = np.sqrt(2.0) * np.sin(2.0 * np.pi * t)
        out.append(z.T * shape[None, :])
    return out


def error_covariance(spec, t):
    """Serial covariance omega * r^|s-t| on one subject's time vector."""
    t = np.asarray(t, dtype=float)
    return spec.omega * spec.r ** np.abs(t[:, None] - t[None, :])


def _mvn_factor(cov):
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] < 0.0:
        vals, vecs = np.linalg.eigh(cov + 1e-12 * np.eye(cov.shape[0]))
        if vals[0] < 0.0:
            raise NumericError(
                f"error covariance indefinite even after jitter (min eigenvalue {vals[0]:.3e})"
            )
    return vecs * np.sqrt(vals)


def gen_errors(spec, times, seed):
    """Serially correlated Gaussian noise per subject: list of (m_i,) arrays."""
    rng = _as_rng(seed)
    factors = {}
    out = []
    for t in times:
        t = np.asarray(t, dtype=float)
        key = t.tobytes()
        if key not in factors:
            factors[key] = _mvn_factor(error_covariance(spec, t))
        out.append(factors[key] @ rng.standard_normal(t.size))
    return out


def gen_case(spec, seed):
    """One seeded replicate: (LongitudinalDataset, TruthRecord).

    Subjects share an m-point equispaced grid on [0, 1]. Covariates and
    errors are drawn from a single stream in that order, so equal seeds give
    bit-identical datasets.
    """
    rng = _as_rng(seed)
    grid = np.linspace(0.0, 1.0, spec.m)
    times = [grid] * spec.n
    xs = gen_covariates(spec, times, rng)
    eps = gen_errors(spec, times, rng)
    truth = truth_record(spec)

    signal = truth.intercept(grid).copy()
    ys = []
    for i in range(spec.n):
        y = signal + eps[i]
        for pos, k in enumerate(truth.constant):
            y = y + truth.constant_values[pos] * xs[i][k]
        for pos, k in enumerate(truth.varying):
            y = y + truth.varying_functions[pos](grid) * xs[i][k]
        ys.append(y)
    return LongitudinalDataset(times, ys, xs), truth


def robust_sd(values):
    """Scaled median absolute deviation: 1.4826 × MAD."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DataError("robust_sd of empty sequence")
    return 1.4826 * float(np.median(np.abs(values - np.median(values))))


@dataclass(frozen=True)
class SelectionMetrics:
    """Replication-averaged selection and structure-recovery summaries.

    Rates are per-covariate proportions; counts carry a robust SD companion.
    cvar (cfix) is nan when the truth has no varying (constant) part, and the
    minimum-screening-size fields are nan when ranks were not supplied.
    """

    n_reps: int
    cvar: float
    cfix: float
    size: float
    size_sd: float
    under: float
    over: float
    tp: float
    tp_sd: float
    fp: float
    fp_sd: float
    tpvar: float
    tpvar_sd: float
    fpvar: float
    fpvar_sd: float
    tpfix: float
    tpfix_sd: float
    fpfix: float
    fpfix_sd: float
    mmms_median: float
    mmms_sd: float


def selection_metrics(structures, truth, mmms_values=None):
    """Summarize fitted structures against the truth across replicates.

    structures: per-replicate objects with selected/varying/constant index
    tuples (the gscad ModelStructure). mmms_values: optional per-replicate
    minimum screening model sizes.
    """
    structures = list(structures)
    if not structures:
        raise DataError("selection_metrics needs at least one replicate")
    true_all = set(truth.selected)
    true_var, true_fix = set(truth.varying), set(truth.constant)

    size, tp, fp = [], [], []
    tpvar, fpvar, tpfix, fpfix = [], [], [], []
    under, over = [], []
    for st in structures:
        sel = set(st.selected)
        var, fix = set(st.varying), set(st.constant)
        size.append(len(sel))
        tp.append(len(sel & true_all))
        fp.append(len(sel - true_all))
        tpvar.append(len(var & true_var))
        fpvar.append(len(var - true_var))
        tpfix.append(len(fix & true_fix))
        fpfix.append(len(fix - true_fix))
        under.append(not sel >= true_all)
        over.append(sel > true_all)

    def pair(xs):
        return float(np.mean(xs)), robust_sd(xs)

    size_m, size_sd = pair(size)
    tp_m, tp_sd = pair(tp)
    fp_m, fp_sd = pair(fp)
    tpvar_m, tpvar_sd = pair(tpvar)
    fpvar_m, fpvar_sd = pair(fpvar)
    tpfix_m, tpfix_sd = pair(tpfix)
    fpfix_m, fpfix_sd = pair(fpfix)
    if mmms_values is not None:
        mmms_values = np.asarray(list(mmms_values), dtype=float)
        mmms_med, mmms_sd = float(np.median(mmms_values)), robust_sd(mmms_values)
    else:
        mmms_med = mmms_sd = float("nan")
    return SelectionMetrics(
        n_reps=len(structures),
        cvar=tpvar_m / len(true_var) if true_var else float("nan"),
        cfix=tpfix_m / len(true_fix) if true_fix else float("nan"),
        size=size_m,
        size_sd=size_sd,
        under=float(np.mean(under)),
        over=float(np.mean(over)),
        tp=tp_m,
        tp_sd=tp_sd,
        fp=fp_m,
        fp_sd=fp_sd,
        tpvar=tpvar_m,
        tpvar_sd=tpvar_sd,
        fpvar=fpvar_m,
        fpvar_sd=fpvar_sd,
        tpfix=tpfix_m,
        tpfix_sd=tpfix_sd,
        fpfix=fpfix_m,
        fpfix_sd=fpfix_sd,
        mmms_median=mmms_med,
        mmms_sd=mmms_sd,
    )


@dataclass(frozen=True)
class ConstantErrors:
    """Replication-averaged errors of one constant-coefficient estimate."""

    mae: float
    mae_sd: float
    rmse: float
    rmse_sd: float


@dataclass(frozen=True)
class CurveErrors:
    """Replication-averaged integrated errors of one curve estimate."""

    miae: float
    miae_sd: float
    rmise: float
    rmise_sd: float


@dataclass
class EstimationMetrics:
    """Constant and curve error summaries keyed by covariate index.

    Curves use INTERCEPT (-1) for the baseline curve; constants are keyed by
    their covariate index in truth order.
    """

    constants: dict
    curves: dict


def constant_errors(estimates, true_value):
    estimates = np.asarray(estimates, dtype=float)
    err = estimates - true_value
    return ConstantErrors(
        mae=float(np.mean(np.abs(err))),
        mae_sd=robust_sd(np.abs(err)),
        rmse=float(np.sqrt(np.mean(err**2))),
        rmse_sd=robust_sd(np.sqrt(err**2)),
    )


def curve_errors(estimates, true_values, grid):
    """Integrated errors of (R, G) curve estimates against truth on grid."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    diff = estimates - np.asarray(true_values, dtype=float)[None, :]
    iae = np.trapezoid(np.abs(diff), grid, axis=1)
    ise = np.trapezoid(diff**2, grid, axis=1)
    return CurveErrors(
        miae=float(np.mean(iae)),
        miae_sd=robust_sd(iae),
        rmise=float(np.sqrt(np.mean(ise))),
        rmise_sd=robust_sd(np.sqrt(ise)),
    )


def estimation_metrics(constant_estimates, curve_estimates, truth, grid):
    """Aggregate per-replicate estimates against the truth.

    constant_estimates: (R, s1) columns in truth.constant order; may be None
    when the truth has no constants. curve_estimates: (R, 1 + s2, G) with the
    intercept first then truth.varying order; grid: the G evaluation points.
    """
    grid = np.asarray(grid, dtype=float)
    constants = {}
    if truth.constant:
        constant_estimates = np.asarray(constant_estimates, dtype=float)
        if constant_estimates.ndim != 2 or constant_estimates.shape[1] != len(truth.constant):
            raise DataError("constant estimate matrix does not match the truth layout")
        for pos, k in enumerate(truth.constant):
            constants[k] = constant_errors(constant_estimates[:, pos], truth.constant_values[pos])

    curve_estimates = np.asarray(curve_estimates, dtype=float)
    if curve_estimates.ndim != 3 or curve_estimates.shape[1] != 1 + len(truth.varying):
        raise DataError("curve estimate array does not match the truth layout")
    curves = {INTERCEPT: curve_errors(curve_estimates[:, 0], truth.intercept(grid), grid)}
    for pos, k in enumerate(truth.varying):
        curves[k] = curve_errors(
            curve_estimates[:, pos + 1], truth.varying_functions[pos](grid), grid
        )
    return EstimationMetrics(constants=constants, curves=curves)
