"""Semivarying-coefficient estimation by profiled local-linear smoothing.

The selected covariates are split into a block with constant coefficients and
a block with time-varying coefficients; the intercept always varies. At any
time point the varying block is estimated by a kernel-weighted local-linear
fit, and profiling those fits out of the model leaves a closed-form least
squares problem for the constant block.

When a per-subject error covariance is supplied, the kernel localizes its
inverse: subject i contributes through the matrix
sqrt(W_i) Lambda_i^{-1} sqrt(W_i), with W_i the diagonal kernel weights at
the query point. Rows far from the query therefore never enter the local
system, and for a diagonal covariance the weighting reduces exactly to the
plain kernel-weighted fit. The constant block is then estimated by
generalized least squares in the smoothed-out residual columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import ConfigError, NumericError
from .kernels import KERNEL_FAMILIES, default_bandwidth_grid, pick_bandwidth

__all__ = [
    "SemiVaryingSpec",
    "SemiVaryingFit",
    "local_fit_given_beta1",
    "profile_constant_fit",
    "fit_semivarying",
    "write_profile_curves_csv",
    "write_constants_csv",
]

_MAX_ENLARGE = 5
_ENLARGE_FACTOR = 1.5
_EIG_RTOL = 1e-11
_EIGENVALUE_FLOOR_REL = 1e-8


def _index_tuple(idx, label):
    out = []
    for v in idx:
        iv = int(v)
        if iv != v or iv < 0:
            raise ConfigError(f"{label} must be nonnegative integers, got {v!r}")
        out.append(iv)
    if len(set(out)) != len(out):
        raise ConfigError(f"duplicate indices in {label}")
    return tuple(sorted(out))


@dataclass(frozen=True)
class SemiVaryingSpec:
    """Which covariates enter with constant and which with varying coefficients.

    Indices are 0-based positions into the dataset's covariate rows. The two
    sets must be disjoint; the intercept is always part of the varying block.
    """

    constant_idx: tuple = ()
    varying_idx: tuple = ()

    def __post_init__(self):
        const = _index_tuple(self.constant_idx, "constant_idx")
        vary = _index_tuple(self.varying_idx, "varying_idx")
        if set(const) & set(vary):
            raise ConfigError("a covariate cannot be both constant and varying")
        object.__setattr__(self, "constant_idx", const)
        object.__setattr__(self, "varying_idx", vary)

    @property
    def s1(self):
        return len(self.constant_idx)

    @property
    def s2(self):
        return len(self.varying_idx)

    @classmethod
    def from_structure(cls, structure):
        """Build from a structure-identification result (constant/varying sets)."""
        return cls(tuple(structure.constant), tuple(structure.varying))

    def check_dataset(self, p):
        used = self.constant_idx + self.varying_idx
        if used and max(used) >= p:
            raise ConfigError(
                f"covariate index {max(used)} out of range for p={p} covariates"
            )


@dataclass(frozen=True)
class SemiVaryingFit:
    """Fitted semivarying-coefficient model.

    ``curves`` holds the intercept curve in row 0 followed by one row per
    varying covariate (in ``spec.varying_idx`` order), sampled on ``grid``.
    ``slopes`` holds the corresponding local derivative estimates. Standard
    errors are present only when a bootstrap was run.
    """

    spec: SemiVaryingSpec
    beta1: np.ndarray
    grid: np.ndarray
    curves: np.ndarray
    slopes: np.ndarray
    h1: float
    weighted: bool
    kernel_family: str = "epanechnikov"
    beta1_se: np.ndarray | None = None
    curve_se: np.ndarray | None = None
    bootstrap_B: int = 0
    h1_candidates: np.ndarray | None = field(default=None, repr=False)
    h1_cv: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        curves = np.asarray(self.curves, dtype=float)
        beta1 = np.asarray(self.beta1, dtype=float).reshape(-1)
        if grid[0] > 1e-12 or grid[-1] < 1.0 - 1e-12:
            raise ConfigError("curve grid must cover [0, 1]")
        if beta1.size != self.spec.s1:
            raise ConfigError("beta1 length does not match the constant block")
        if curves.shape != (1 + self.spec.s2, grid.size):
            raise ConfigError("curve array shape does not match spec and grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "beta1", beta1)

    def curve_at(self, t):
        """Linear interpolation of all coefficient curves at times t."""
        t = np.asarray(t, dtype=float)
        return np.vstack([np.interp(t, self.grid, row) for row in self.curves])

    def predict(self, dataset):
        """Fitted mean response per subject at the dataset's observation times."""
        self.spec.check_dataset(dataset.p)
        out = []
        for i in range(dataset.n):
            X = dataset.covariates[i]
            vals = self.curve_at(dataset.times[i])
            mean = vals[0].copy()
            for r, k in enumerate(self.spec.varying_idx, start=1):
                mean += X[k] * vals[r]
            for b, k in enumerate(self.spec.constant_idx):
                mean += X[k] * self.beta1[b]
            out.append(mean)
        return out


def _covariance_blocks(dataset, covariance):
    """Materialize one covariance matrix per subject, or None."""
    if covariance is None:
        return None
    if hasattr(covariance, "subject_matrix"):
        blocks = [np.asarray(covariance.subject_matrix(t), dtype=float)
                  for t in dataset.times]
    else:
        blocks = [np.asarray(B, dtype=float) for B in covariance]
        if len(blocks) != dataset.n:
            raise ConfigError("need one covariance block per subject")
    for i, (B, t) in enumerate(zip(blocks, dataset.times)):
        if B.shape != (t.size, t.size):
            raise ConfigError(f"covariance block {i + 1} has shape {B.shape}, "
                              f"expected ({t.size}, {t.size})")
    return blocks


def _inverse_blocks(blocks):
    """Per-subject inverse covariance matrices with a relative eigenvalue floor."""
    inverses = []
    for i, B in enumerate(blocks):
        B = 0.5 * (B + B.T)
        lam, V = np.linalg.eigh(B)
        mean_eig = float(np.trace(B)) / B.shape[0]
        if mean_eig <= 0.0:
            raise NumericError(
                f"covariance block {i + 1} is not positive: mean eigenvalue "
                f"{mean_eig:.3e}"
            )
        lam = np.maximum(lam, _EIGENVALUE_FLOOR_REL * mean_eig)
        inverses.append((V / lam) @ V.T)
    return inverses


class _ProfileEngine:
    """Shared machinery for the local solves and the profiled constant fit.

    All local systems grow out of three stacked arrays: the
    intercept-and-varying design ``U`` (rows (1, x2_ij)), its time-scaled
    companion ``tU``, and the response columns ``Zraw`` = [y, X1]. The local
    design at query t0 is [U, tU - t0 U] under kernel weights in the raw
    times. Without a covariance the weights are diagonal; with one, subject
    i enters through sqrt(W_i) A_i sqrt(W_i) where A_i is its inverse
    covariance block, so the kernel support still bounds which rows interact.
    """

    def __init__(self, dataset, spec, covariance=None, kernel_family="epanechnikov"):
        if kernel_family not in KERNEL_FAMILIES:
            raise ConfigError(f"unknown kernel family {kernel_family!r}")
        spec.check_dataset(dataset.p)
        self.ds = dataset
        self.spec = spec
        self.kernel_family = kernel_family
        self.k = 1 + spec.s2
        self.d = 2 * self.k
        self.c = 1 + spec.s1

        self.t = dataset.stacked_times
        self.y = dataset.stacked_y
        X = dataset.stacked_x
        self.U = np.column_stack([np.ones(dataset.N)]
                                 + [X[:, k] for k in spec.varying_idx])
        self.X1 = (X[:, list(spec.constant_idx)] if spec.s1
                   else np.zeros((dataset.N, 0)))
        self.Zraw = np.column_stack([self.y, self.X1])
        self.tU = self.t[:, None] * self.U
        self.row_starts = np.array([s.start for s in dataset.row_slices])

        blocks = _covariance_blocks(dataset, covariance)
        self.weighted = blocks is not None
        self.A = _inverse_blocks(blocks) if self.weighted else None

    def _kernel_w(self, queries, h):
        kfun = KERNEL_FAMILIES[self.kernel_family]
        return kfun((self.t[:, None] - queries[None, :]) / h) / h

    def _subject_sandwich(self, i, w):
        """Subject i's five moment blocks under sqrt(W) A sqrt(W) weighting."""
        sl = self.ds.row_slices[i]
        m = sl.stop - sl.start
        s = np.sqrt(w[sl])
        SU = s[:, :, None] * self.U[sl][:, None, :]
        StU = self.t[sl][:, None, None] * SU
        SZ = s[:, :, None] * self.Zraw[sl][:, None, :]
        A = self.A[i]
        ASU = (A @ SU.reshape(m, -1)).reshape(SU.shape)
        AStU = (A @ StU.reshape(m, -1)).reshape(StU.shape)
        ASZ = (A @ SZ.reshape(m, -1)).reshape(SZ.shape)
        mpp = np.einsum("mqa,mqb->qab", SU, ASU)
        mpq = np.einsum("mqa,mqb->qab", SU, AStU)
        mqq = np.einsum("mqa,mqb->qab", StU, AStU)
        rp = np.einsum("mqa,mqc->qac", SU, ASZ)
        rq = np.einsum("mqa,mqc->qac", StU, ASZ)
        return mpp, mpq, mqq, rp, rq

    def _moments(self, w):
        if self.weighted:
            nq, k, c = w.shape[1], self.k, self.c
            out = [np.zeros((nq, k, k)) for _ in range(3)]
            out += [np.zeros((nq, k, c)) for _ in range(2)]
            for i in range(self.ds.n):
                for tot, part in zip(out, self._subject_sandwich(i, w)):
                    tot += part
            return tuple(out)
        U, tU, Z = self.U, self.tU, self.Zraw
        mpp = np.einsum("nq,na,nb->qab", w, U, U, optimize=True)
        mpq = np.einsum("nq,na,nb->qab", w, U, tU, optimize=True)
        mqq = np.einsum("nq,na,nb->qab", w, tU, tU, optimize=True)
        rp = np.einsum("nq,na,nc->qac", w, U, Z, optimize=True)
        rq = np.einsum("nq,na,nc->qac", w, tU, Z, optimize=True)
        return mpp, mpq, mqq, rp, rq

    def _per_subject_moments(self, w):
        """Per-subject versions of the five moment stacks, for leave-one-out."""
        n, nq, k, c = self.ds.n, w.shape[1], self.k, self.c
        shapes = [(k, k), (k, k), (k, k), (k, c), (k, c)]
        out = [np.empty((n, nq) + s) for s in shapes]
        if self.weighted:
            for i in range(n):
                for dest, part in zip(out, self._subject_sandwich(i, w)):
                    dest[i] = part
            return tuple(out)
        pairs = [(self.U, self.U), (self.U, self.tU), (self.tU, self.tU),
                 (self.U, self.Zraw), (self.tU, self.Zraw)]
        chunk = max(1, 8_000_000 // max(self.ds.N * k * k, 1))
        for a in range(0, nq, chunk):
            sl = slice(a, min(a + chunk, nq))
            wc = w[:, sl]
            for dest, (L, Rm) in zip(out, pairs):
                rows = np.einsum("nq,na,nb->nqab", wc, L, Rm)
                dest[:, sl] = np.add.reduceat(rows, self.row_starts, axis=0)
        return tuple(out)

    def _assemble(self, queries, mpp, mpq, mqq, rp, rq):
        nq, k, d = queries.size, self.k, self.d
        t0 = queries[:, None, None]
        g01 = mpq - t0 * mpp
        G = np.empty((nq, d, d))
        G[:, :k, :k] = mpp
        G[:, :k, k:] = g01
        G[:, k:, :k] = g01.transpose(0, 2, 1)
        G[:, k:, k:] = mqq - t0 * (mpq + mpq.transpose(0, 2, 1)) + t0 * t0 * mpp
        R = np.concatenate([rp, rq - t0 * rp], axis=1)
        return G, R

    @staticmethod
    def _solvable(G):
        eig = np.linalg.eigvalsh(G)
        return (eig[:, -1] > 0) & (eig[:, 0] > _EIG_RTOL * np.maximum(eig[:, -1], 1e-300))

    def _systems(self, queries, w):
        return self._assemble(queries, *self._moments(w))

    def solve_local(self, queries, h, exclude=None):
        """Local solutions for response columns [y, X1] at each query point.

        Singular systems follow the shared fallback policy: enlarge the
        bandwidth by 1.5x up to five times, then drop the kernel entirely
        (a global linear fit in the local design).

        Returns an array of shape (len(queries), 2(s2+1), 1+s1).
        """
        queries = np.atleast_1d(np.asarray(queries, dtype=float))
        alpha = np.empty((queries.size, self.d, self.c))
        idx = np.arange(queries.size)
        remaining = queries
        cur_h = float(h)
        for _ in range(_MAX_ENLARGE + 1):
            w = self._kernel_w(remaining, cur_h)
            if exclude is not None:
                w[self.ds.row_slices[exclude]] = 0.0
            G, R = self._systems(remaining, w)
            ok = self._solvable(G)
            if ok.any():
                alpha[idx[ok]] = np.linalg.solve(G[ok], R[ok])
            if ok.all():
                return alpha
            idx, remaining = idx[~ok], remaining[~ok]
            cur_h *= _ENLARGE_FACTOR
        w = np.ones((self.ds.N, remaining.size))
        if exclude is not None:
            w[self.ds.row_slices[exclude]] = 0.0
        G, R = self._systems(remaining, w)
        ok = self._solvable(G)
        if not ok.all():
            raise NumericError(
                "local design stays singular after bandwidth enlargement "
                "and the global fallback"
            )
        alpha[idx] = np.linalg.solve(G, R)
        return alpha

    def fitted_columns(self, alpha, qidx):
        """Rows of the smoother applied to [y, X1]: fitted values per row."""
        lead = alpha[qidx, : self.k, :]
        return np.einsum("na,nac->nc", self.U, lead)

    def beta1_from_alpha(self, alpha, qidx, drop=None):
        """Constant-block estimate from local solutions at the observation times.

        The smoothed-out residual columns E = [y, X1] - S[y, X1] are grammed
        plainly, or against each subject's inverse covariance block when one
        is present (generalized least squares across subjects).
        """
        if self.spec.s1 == 0:
            return np.zeros(0)
        E = self.Zraw - self.fitted_columns(alpha, qidx)
        if self.weighted:
            gram = np.zeros((self.c, self.c))
            for i, sl in enumerate(self.ds.row_slices):
                if i == drop:
                    continue
                Ei = E[sl]
                gram += Ei.T @ (self.A[i] @ Ei)
        elif drop is not None:
            Ed = E[self.ds.row_slices[drop]]
            gram = E.T @ E - Ed.T @ Ed
        else:
            gram = E.T @ E
        A, b = gram[1:, 1:], gram[1:, 0]
        eig = np.linalg.eigvalsh(A)
        if eig[-1] <= 0 or eig[0] <= 1e-12 * eig[-1]:
            self._raise_collinear(E[:, 1:])
        return np.linalg.solve(A, b)

    def _raise_collinear(self, cols):
        _, Rq, piv = scipy.linalg.qr(cols, mode="economic", pivoting=True)
        diag = np.abs(np.diag(Rq))
        tol = 1e-12 * (diag[0] if diag.size and diag[0] > 0 else 1.0)
        rank = int((diag > tol).sum())
        names = [self.ds.names[self.spec.constant_idx[j]] for j in piv[rank:]]
        raise NumericError(
            "constant-coefficient design is collinear after profiling out the "
            "varying part; offending covariates: " + ", ".join(names)
        )

    def coef_from_alpha(self, alpha, beta1):
        """Local coefficients for the response y - X1 beta1, via linearity."""
        return alpha[:, :, 0] - alpha[:, :, 1:] @ beta1

    def fit(self, h, grid):
        uq, qidx = np.unique(self.t, return_inverse=True)
        alpha_obs = self.solve_local(uq, h)
        beta1 = self.beta1_from_alpha(alpha_obs, qidx)
        alpha_grid = self.solve_local(grid, h)
        coef = self.coef_from_alpha(alpha_grid, beta1)
        return beta1, coef[:, : self.k].T, coef[:, self.k:].T

    def predict_rows(self, alpha, qidx, rows, beta1):
        """Fitted responses for the given rows from local solutions and beta1."""
        coef = self.coef_from_alpha(alpha[qidx[rows]], beta1)
        yhat = np.einsum("ma,ma->m", self.U[rows], coef[:, : self.k])
        if self.spec.s1:
            yhat = yhat + self.X1[rows] @ beta1
        return yhat

    def cv_curve(self, h_grid):
        """Leave-one-subject-out prediction error for each candidate bandwidth."""
        if self.ds.n < 2:
            raise NumericError("leave-one-subject-out CV needs at least 2 subjects")
        h_grid = np.asarray(h_grid, dtype=float)
        uq, qidx = np.unique(self.t, return_inverse=True)
        cv = np.full(h_grid.size, np.inf)
        for a, h in enumerate(h_grid):
            w = self._kernel_w(uq, float(h))
            per = self._per_subject_moments(w)
            totals = [m.sum(axis=0) for m in per]
            total = 0.0
            try:
                for i in range(self.ds.n):
                    G, R = self._assemble(uq, *(tot - m[i] for tot, m in
                                                zip(totals, per)))
                    ok = self._solvable(G)
                    if ok.all():
                        alpha = np.linalg.solve(G, R)
                    else:
                        alpha = np.empty((uq.size, self.d, self.c))
                        alpha[ok] = np.linalg.solve(G[ok], R[ok])
                        bad = np.nonzero(~ok)[0]
                        alpha[bad] = self.solve_local(
                            uq[bad], float(h) * _ENLARGE_FACTOR, exclude=i)
                    beta1 = self.beta1_from_alpha(alpha, qidx, drop=i)
                    rows = np.arange(self.ds.row_slices[i].start,
                                     self.ds.row_slices[i].stop)
                    yhat = self.predict_rows(alpha, qidx, rows, beta1)
                    resid = self.y[rows] - yhat
                    total += float(resid @ resid)
            except NumericError:
                continue
            cv[a] = total
        return cv


def local_fit_given_beta1(dataset, spec, beta1, t0, h1, covariance=None,
                          kernel_family="epanechnikov"):
    """Local-linear varying-coefficient fit at one time point, constants held fixed.

    Solves the kernel-weighted least squares problem in the local design
    (1, x2, (t - t0) * (1, x2)) for the response y - x1' beta1 and returns
    the triple (intercept level, varying-coefficient values, local slopes)
    at t0. With a covariance supplied the kernel weights localize each
    subject's inverse covariance block instead of acting alone.
    """
    if not h1 > 0:
        raise ConfigError("bandwidth must be positive")
    eng = _ProfileEngine(dataset, spec, covariance, kernel_family)
    beta1 = np.asarray(beta1, dtype=float).reshape(-1)
    if beta1.size != spec.s1:
        raise ConfigError(f"beta1 must have length {spec.s1}")
    alpha = eng.solve_local(np.array([float(t0)]), float(h1))
    coef = eng.coef_from_alpha(alpha, beta1)[0]
    return float(coef[0]), coef[1:eng.k].copy(), coef[eng.k:].copy()


def profile_constant_fit(dataset, spec, h1, covariance=None,
                         kernel_family="epanechnikov"):
    """Closed-form profiled least squares estimate of the constant block.

    The varying part is smoothed out of the response and of each constant
    covariate by the same local-linear smoother; the constant coefficients
    are then the least squares solution in the residualized columns (with
    the per-subject covariance weighting when supplied).
    """
    if spec.s1 < 1:
        raise ConfigError("no constant-coefficient covariates in the model spec")
    if not h1 > 0:
        raise ConfigError("bandwidth must be positive")
    eng = _ProfileEngine(dataset, spec, covariance, kernel_family)
    uq, qidx = np.unique(eng.t, return_inverse=True)
    alpha = eng.solve_local(uq, float(h1))
    return eng.beta1_from_alpha(alpha, qidx)


def fit_semivarying(dataset, spec, h1_grid=None, covariance=None, bootstrap_B=0,
                    h1=None, grid_size=101, kernel_family="epanechnikov",
                    seed=None):
    """Fit the semivarying-coefficient model, selecting the bandwidth by CV.

    Parameters
    ----------
    dataset : LongitudinalDataset
    spec : SemiVaryingSpec
    h1_grid : array, optional
        Candidate bandwidths for leave-one-subject-out CV. Ignored when
        ``h1`` pins the bandwidth; defaults to the shared log-spaced grid.
    covariance : optional
        Per-subject error covariance: an object with ``subject_matrix(times)``
        or a sequence of one matrix per subject. Absent means the plain
        (working-independence) fit.
    bootstrap_B : int
        Number of subject-level bootstrap resamples for standard errors;
        0 disables the bootstrap.
    h1 : float, optional
        Fixed bandwidth, skipping cross-validation.
    grid_size : int
        Number of equispaced output grid points on [0, 1].
    seed : optional
        Seed for the bootstrap resampling streams.
    """
    if grid_size < 2:
        raise ConfigError("grid_size must be at least 2")
    if bootstrap_B < 0:
        raise ConfigError("bootstrap_B must be nonnegative")
    blocks = _covariance_blocks(dataset, covariance)
    eng = _ProfileEngine(dataset, spec, blocks, kernel_family)
    h1_candidates = cv = None
    if h1 is None:
        h1_candidates = (default_bandwidth_grid() if h1_grid is None
                         else np.asarray(h1_grid, dtype=float))
        cv = eng.cv_curve(h1_candidates)
        h1 = pick_bandwidth(h1_candidates, cv)
    h1 = float(h1)
    if not h1 > 0:
        raise ConfigError("bandwidth must be positive")

    grid = np.linspace(0.0, 1.0, grid_size)
    beta1, curves, slopes = eng.fit(h1, grid)

    beta1_se = curve_se = None
    if bootstrap_B > 0:
        rng_children = np.random.SeedSequence(seed).spawn(bootstrap_B)
        b1s = np.empty((bootstrap_B, spec.s1))
        cvs = np.empty((bootstrap_B, 1 + spec.s2, grid.size))
        for b in range(bootstrap_B):
            rng = np.random.default_rng(rng_children[b])
            idx = rng.integers(0, dataset.n, dataset.n)
            ds_b = dataset.subset_subjects(idx)
            blocks_b = [blocks[i] for i in idx] if blocks is not None else None
            eng_b = _ProfileEngine(ds_b, spec, blocks_b, kernel_family)
            b1s[b], cvs[b], _ = eng_b.fit(h1, grid)
        ddof = 1 if bootstrap_B > 1 else 0
        beta1_se = b1s.std(axis=0, ddof=ddof)
        curve_se = cvs.std(axis=0, ddof=ddof)

    return SemiVaryingFit(
        spec=spec, beta1=beta1, grid=grid, curves=curves, slopes=slopes,
        h1=h1, weighted=eng.weighted, kernel_family=kernel_family,
        beta1_se=beta1_se, curve_se=curve_se, bootstrap_B=int(bootstrap_B),
        h1_candidates=h1_candidates, h1_cv=cv,
    )


def _curve_labels(fit, names=None):
    labels = ["beta0"]
    for k in fit.spec.varying_idx:
        labels.append(names[k] if names is not None else f"x{k + 1}")
    return labels


def write_profile_curves_csv(fit, path, names=None):
    """Write the coefficient curves (and bootstrap bands when present) as CSV."""
    import csv

    labels = _curve_labels(fit, names)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t"] + labels
        if fit.curve_se is not None:
            header += [f"lower_{s}" for s in labels] + [f"upper_{s}" for s in labels]
        writer.writerow(header)
        for g in range(fit.grid.size):
            row = [f"{fit.grid[g]:.17g}"] + [f"{v:.17g}" for v in fit.curves[:, g]]
            if fit.curve_se is not None:
                lo = fit.curves[:, g] - 1.96 * fit.curve_se[:, g]
                hi = fit.curves[:, g] + 1.96 * fit.curve_se[:, g]
                row += [f"{v:.17g}" for v in lo] + [f"{v:.17g}" for v in hi]
            writer.writerow(row)


def write_constants_csv(fit, path, names=None):
    """Write the constant-coefficient estimates (and SEs when present) as CSV."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["covariate", "estimate", "se"])
        for b, k in enumerate(fit.spec.constant_idx):
            label = names[k] if names is not None else f"x{k + 1}"
            se = "" if fit.beta1_se is None else f"{fit.beta1_se[b]:.17g}"
            writer.writerow([label, f"{fit.beta1[b]:.17g}", se])
