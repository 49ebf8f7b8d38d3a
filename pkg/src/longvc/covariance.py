"""Nonparametric covariance estimation of the error process from fit residuals.

The smooth part of the covariance surface is a bivariate local-linear fit of
within-subject residual cross-products over pairs of distinct observations,
with a product kernel. The fitted surface is then projected onto its leading
positive eigencomponents, and the diagonal is replaced by a separate
local-linear fit of the squared residuals. Per-subject covariance blocks are
assembled from the surface by bilinear interpolation off the grid (entries
with distinct observation indexes) and from the variance curve on the
diagonal.

All pair sums exploit a factorization: over ordered within-subject pairs
(j != k), a product of kernel moments equals the product of the two
one-dimensional per-subject moment sums minus the same-observation term.
That reduces every surface moment to matrix products of stacked
(rows x nodes) arrays, with no explicit pair enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError, NumericError
from .kernels import (
    KERNEL_FAMILIES,
    KernelSpec,
    default_bandwidth_grid,
    local_linear_grid,
    pick_bandwidth,
)

__all__ = [
    "ResidualSet",
    "VarianceFunction",
    "CovarianceModel",
    "residuals",
    "estimate_psi",
    "truncate_psd",
    "estimate_sigma2",
    "assemble_phi",
    "subject_lambda",
    "select_h2",
    "select_h3",
    "estimate_covariance",
    "write_covariance_csv",
    "write_eigenvalues_csv",
]

_MAX_ENLARGE = 5
_ENLARGE_FACTOR = 1.5
_EIG_RTOL = 1e-11
_ABS_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class ResidualSet:
    """Per-subject residuals aligned with their observation times."""

    times: tuple
    values: tuple

    def __post_init__(self):
        times = tuple(np.asarray(t, dtype=float) for t in self.times)
        values = tuple(np.asarray(v, dtype=float) for v in self.values)
        if len(times) != len(values) or not times:
            raise DataError("need matching, nonempty times and values")
        for t, v in zip(times, values):
            if t.shape != v.shape or t.ndim != 1:
                raise DataError("residuals must align with times subject by subject")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def n(self):
        return len(self.values)

    @property
    def stacked_times(self):
        return np.concatenate(self.times)

    @property
    def stacked_values(self):
        return np.concatenate(self.values)

    @property
    def row_starts(self):
        m = np.array([t.size for t in self.times])
        return np.concatenate([[0], np.cumsum(m)[:-1]])

    def scaled(self, c):
        return ResidualSet(self.times, tuple(c * v for v in self.values))


def residuals(dataset, fit):
    """Residuals of a semivarying fit, curves evaluated by grid interpolation."""
    preds = fit.predict(dataset)
    vals = tuple(y - p for y, p in zip(dataset.y, preds))
    return ResidualSet(dataset.times, vals)


def _kernel_fn(kernel_family):
    if kernel_family not in KERNEL_FAMILIES:
        raise ConfigError(f"unknown kernel family {kernel_family!r}")
    return KERNEL_FAMILIES[kernel_family]


class _PairSmoother:
    """Moment machinery for the bivariate local-linear fit over residual pairs."""

    def __init__(self, res, kernel_family="epanechnikov"):
        self.kernel_family = kernel_family
        self.kfun = _kernel_fn(kernel_family)
        self.t = res.stacked_times
        self.eps = res.stacked_values
        self.starts = res.row_starts
        self.n = res.n
        m = np.array([v.size for v in res.values])
        if int((m * (m - 1)).sum()) == 0:
            raise DataError(
                "covariance not estimable: no subject has two or more observations"
            )

    def _arrays(self, nodes, h):
        """Kernel moment arrays at the given nodes (None h means no kernel)."""
        dt = self.t[:, None] - np.asarray(nodes, dtype=float)[None, :]
        K = np.ones_like(dt) if h is None else self.kfun(dt / h) / h
        W = (K, K * dt, K * dt * dt)
        A = tuple(np.add.reduceat(Wa, self.starts, axis=0) for Wa in W)
        eW = (W[0] * self.eps[:, None], W[1] * self.eps[:, None])
        E = tuple(np.add.reduceat(ew, self.starts, axis=0) for ew in eW)
        return W, A, eW, E

    @staticmethod
    def _stack_systems(S, R):
        """Assemble (..., 3, 3) normal matrices and (..., 3) right sides."""
        s00, s10, s01, s20, s11, s02 = S
        M = np.empty(s00.shape + (3, 3))
        M[..., 0, 0] = s00
        M[..., 0, 1] = M[..., 1, 0] = s10
        M[..., 0, 2] = M[..., 2, 0] = s01
        M[..., 1, 1] = s20
        M[..., 1, 2] = M[..., 2, 1] = s11
        M[..., 2, 2] = s02
        rhs = np.stack(R, axis=-1)
        return M, rhs

    def grid_systems(self, nodes, h):
        """Normal systems at the full nodes x nodes grid."""
        W, A, eW, E = self._arrays(nodes, h)
        def cross(Xa, Xb, Ya, Yb):
            return Xa.T @ Xb - Ya.T @ Yb
        S = (
            cross(A[0], A[0], W[0], W[0]),
            cross(A[1], A[0], W[1], W[0]),
            cross(A[0], A[1], W[0], W[1]),
            cross(A[2], A[0], W[2], W[0]),
            cross(A[1], A[1], W[1], W[1]),
            cross(A[0], A[2], W[0], W[2]),
        )
        R = (
            cross(E[0], E[0], eW[0], eW[0]),
            cross(E[1], E[0], eW[1], eW[0]),
            cross(E[0], E[1], eW[0], eW[1]),
        )
        return self._stack_systems(S, R)

    def pair_systems(self, u_nodes, v_nodes, h):
        """Normal systems at an explicit list of (u, v) node pairs."""
        Wu, Au, eWu, Eu = self._arrays(u_nodes, h)
        Wv, Av, eWv, Ev = self._arrays(v_nodes, h)
        def cross(Xa, Xb, Ya, Yb):
            return np.einsum("ip,ip->p", Xa, Xb) - np.einsum("np,np->p", Ya, Yb)
        S = (
            cross(Au[0], Av[0], Wu[0], Wv[0]),
            cross(Au[1], Av[0], Wu[1], Wv[0]),
            cross(Au[0], Av[1], Wu[0], Wv[1]),
            cross(Au[2], Av[0], Wu[2], Wv[0]),
            cross(Au[1], Av[1], Wu[1], Wv[1]),
            cross(Au[0], Av[2], Wu[0], Wv[2]),
        )
        R = (
            cross(Eu[0], Ev[0], eWu[0], eWv[0]),
            cross(Eu[1], Ev[0], eWu[1], eWv[0]),
            cross(Eu[0], Ev[1], eWu[0], eWv[1]),
        )
        return self._stack_systems(S, R)

    @staticmethod
    def _solvable(M):
        eig = np.linalg.eigvalsh(M)
        return (eig[..., -1] > 0) & (
            eig[..., 0] > _EIG_RTOL * np.maximum(eig[..., -1], 1e-300)
        )

    def solve_pairs(self, u_nodes, v_nodes, h):
        """Surface values at (u, v) pairs with the shared fallback policy."""
        u_nodes = np.atleast_1d(np.asarray(u_nodes, dtype=float))
        v_nodes = np.atleast_1d(np.asarray(v_nodes, dtype=float))
        out = np.empty(u_nodes.size)
        idx = np.arange(u_nodes.size)
        cur_h = h
        for _ in range(_MAX_ENLARGE + 1):
            M, rhs = self.pair_systems(u_nodes, v_nodes, cur_h)
            ok = self._solvable(M)
            if ok.any():
                out[idx[ok]] = np.linalg.solve(M[ok], rhs[ok][..., None])[:, 0, 0]
            if ok.all():
                return out
            idx, u_nodes, v_nodes = idx[~ok], u_nodes[~ok], v_nodes[~ok]
            cur_h *= _ENLARGE_FACTOR
        M, rhs = self.pair_systems(u_nodes, v_nodes, None)
        ok = self._solvable(M)
        sol = np.empty(u_nodes.size)
        if ok.any():
            sol[ok] = np.linalg.solve(M[ok], rhs[ok][..., None])[:, 0, 0]
        if not ok.all():
            s00 = M[~ok][:, 0, 0]
            if np.any(s00 <= 0):
                raise NumericError("no usable residual pairs for the covariance fit")
            sol[~ok] = rhs[~ok][:, 0] / s00
        out[idx] = sol
        return out

    def surface(self, nodes, h):
        """Raw surface on the nodes x nodes grid, fallback policy per node."""
        nodes = np.asarray(nodes, dtype=float)
        G = nodes.size
        M, rhs = self.grid_systems(nodes, h)
        M = M.reshape(G * G, 3, 3)
        rhs = rhs.reshape(G * G, 3)
        ok = self._solvable(M)
        flat = np.empty(G * G)
        if ok.any():
            flat[ok] = np.linalg.solve(M[ok], rhs[ok][..., None])[:, 0, 0]
        if not ok.all():
            bad = np.nonzero(~ok)[0]
            uu, vv = np.meshgrid(nodes, nodes, indexing="ij")
            flat[bad] = self.solve_pairs(uu.ravel()[bad], vv.ravel()[bad],
                                         h * _ENLARGE_FACTOR)
        return flat.reshape(G, G)


def estimate_psi(res, h2, grid_size=101, kernel_family="epanechnikov"):
    """Raw smooth-covariance surface on an equispaced grid, symmetrized.

    Fits the local plane a + b(s - u) + c(t - v) to the within-subject
    residual cross-products over ordered pairs of distinct observations and
    keeps the level a at each grid node. The result is averaged with its
    transpose, which removes roundoff asymmetry (the pair set itself is
    symmetric in the two roles).
    """
    if not h2 > 0:
        raise ConfigError("bandwidth must be positive")
    if grid_size < 2:
        raise ConfigError("grid_size must be at least 2")
    sm = _PairSmoother(res, kernel_family)
    nodes = np.linspace(0.0, 1.0, grid_size)
    raw = sm.surface(nodes, float(h2))
    return 0.5 * (raw + raw.T)


def truncate_psd(surface, grid=None):
    """Project a symmetric surface onto its leading positive eigencomponents.

    The surface is read as an integral-operator kernel discretized with
    quadrature weight 1/G per node. Eigenvalues are taken in descending
    order and kept up to the first nonpositive one; the reconstruction from
    the kept components is positive semidefinite by construction.

    Returns (psd surface, eigenvalues, eigenfunctions) with eigenfunctions
    scaled to unit integral of their square (rows of shape (kept, G)).
    """
    surface = np.asarray(surface, dtype=float)
    G = surface.shape[0]
    if surface.shape != (G, G):
        raise ConfigError("surface must be square")
    if np.abs(surface - surface.T).max() > 1e-8 * max(1.0, np.abs(surface).max()):
        raise ConfigError("surface must be symmetric")
    lam, vec = np.linalg.eigh(surface / G)
    lam, vec = lam[::-1], vec[:, ::-1]
    kept = 0
    while kept < lam.size and lam[kept] > 0:
        kept += 1
    lam, vec = lam[:kept], vec[:, :kept]
    psd = (vec * (G * lam)) @ vec.T
    funcs = np.sqrt(G) * vec.T
    return psd, lam, funcs


@dataclass(frozen=True)
class VarianceFunction:
    """Variance curve on a grid with linear interpolation and a positive floor."""

    grid: np.ndarray
    values: np.ndarray
    floor: float
    floored: bool

    def __call__(self, t):
        return np.interp(np.asarray(t, dtype=float), self.grid, self.values)


def estimate_sigma2(res, h3, grid_size=101, kernel_family="epanechnikov"):
    """Local-linear fit of the squared residuals on time, floored below.

    The floor is 1e-6 times the sample variance of all residuals, with a
    tiny absolute lower bound so the result stays strictly positive even
    for degenerate (for example all-zero) residuals; hitting the floor at
    any grid node sets the ``floored`` flag.
    """
    if not h3 > 0:
        raise ConfigError("bandwidth must be positive")
    t = res.stacked_times
    z = res.stacked_values ** 2
    grid = np.linspace(0.0, 1.0, grid_size)
    spec = KernelSpec(kernel_family, float(h3))
    values = local_linear_grid(t, z, grid, spec)
    floor = max(1e-6 * float(np.var(res.stacked_values)), _ABS_VARIANCE_FLOOR)
    floored = bool(np.any(values < floor))
    return VarianceFunction(grid=grid, values=np.maximum(values, floor),
                            floor=floor, floored=floored)


@dataclass(frozen=True)
class CovarianceModel:
    """Estimated error covariance: smooth surface off-diagonal, variance on it.

    ``psi`` is the positive-semidefinite smooth surface on ``grid`` x
    ``grid``; between nodes it is evaluated by bilinear interpolation.
    ``sigma2`` supplies the diagonal. Per-subject blocks are built entry by
    entry: surface values for pairs of distinct observation indexes, the
    variance curve for the diagonal.
    """

    grid: np.ndarray
    psi: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray = field(repr=False)
    sigma2: VarianceFunction
    h2: float | None = None
    h3: float | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        if psi.shape != (grid.size, grid.size):
            raise ConfigError("surface shape must match the grid")
        if np.abs(psi - psi.T).max() > 1e-12 * max(1.0, np.abs(psi).max()):
            raise ConfigError("surface must be symmetric")
        eig = np.linalg.eigvalsh(psi)
        if eig[0] < -1e-10 * max(1.0, eig[-1]):
            raise ConfigError("surface must be positive semidefinite")
        if not self.sigma2.floor > 0:
            raise ConfigError("variance floor must be positive")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "psi", psi)

    def psi_at(self, u, v):
        """Bilinear interpolation of the smooth surface; exact at grid nodes."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        G = self.grid.size
        step = self.grid[1] - self.grid[0]
        iu = np.clip(((u - self.grid[0]) / step).astype(int), 0, G - 2)
        iv = np.clip(((v - self.grid[0]) / step).astype(int), 0, G - 2)
        au = (u - self.grid[iu]) / step
        av = (v - self.grid[iv]) / step
        return ((1 - au) * (1 - av) * self.psi[iu, iv]
                + au * (1 - av) * self.psi[iu + 1, iv]
                + (1 - au) * av * self.psi[iu, iv + 1]
                + au * av * self.psi[iu + 1, iv + 1])

    def sigma2_at(self, t):
        return self.sigma2(t)

    def phi_at(self, u, v):
        """Covariance of the error process: surface off the diagonal, variance on it."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return np.where(u == v, self.sigma2(u), self.psi_at(u, v))

    def subject_matrix(self, times):
        """Covariance block for one subject's observation times."""
        t = np.asarray(times, dtype=float)
        M = self.psi_at(t[:, None], t[None, :])
        np.fill_diagonal(M, self.sigma2(t))
        return M


def assemble_phi(psi, sigma2, grid=None, eigenvalues=None, eigenfunctions=None,
                 h2=None, h3=None):
    """Combine a PSD surface and a variance curve into a CovarianceModel.

    When eigenpairs are not supplied the surface is decomposed here (it must
    already be positive semidefinite up to roundoff).
    """
    psi = np.asarray(psi, dtype=float)
    if grid is None:
        grid = sigma2.grid
    grid = np.asarray(grid, dtype=float)
    if eigenvalues is None or eigenfunctions is None:
        psi, eigenvalues, eigenfunctions = truncate_psd(psi)
    return CovarianceModel(grid=grid, psi=psi, eigenvalues=eigenvalues,
                           eigenfunctions=eigenfunctions, sigma2=sigma2,
                           h2=h2, h3=h3)


def subject_lambda(model, times):
    """Per-subject covariance block (entry rule as in the model itself)."""
    return model.subject_matrix(times)


def select_h2(res, h_grid=None, kernel_family="epanechnikov"):
    """Bandwidth for the surface fit by leave-one-subject-out prediction.

    The prediction target is the held-out subject's residual cross-products
    at its own time pairs, predicted by the raw (untruncated) surface fit on
    the remaining subjects; near-ties go to the larger bandwidth.
    """
    h_grid = default_bandwidth_grid() if h_grid is None else np.asarray(h_grid, float)
    sm = _PairSmoother(res, kernel_family)
    if sm.n < 2:
        raise NumericError("leave-one-subject-out CV needs at least 2 subjects")

    uq, qidx = np.unique(sm.t, return_inverse=True)
    if uq.size > 300:
        return _select_h2_direct(res, sm, h_grid)
    m = np.diff(np.append(sm.starts, sm.t.size))
    pair_u, pair_v, pair_prod, pair_subject = [], [], [], []
    for i in range(sm.n):
        rows = np.arange(sm.starts[i], sm.starts[i] + m[i])
        if rows.size < 2:
            continue
        J, Kk = np.meshgrid(rows, rows, indexing="ij")
        off = J != Kk
        pair_u.append(qidx[J[off]])
        pair_v.append(qidx[Kk[off]])
        pair_prod.append(sm.eps[J[off]] * sm.eps[Kk[off]])
        pair_subject.append(np.full(off.sum(), i))
    pair_u = np.concatenate(pair_u)
    pair_v = np.concatenate(pair_v)
    pair_prod = np.concatenate(pair_prod)
    pair_subject = np.concatenate(pair_subject)

    combos = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    cv = np.full(h_grid.size, np.inf)
    for a, h in enumerate(h_grid):
        W, A, eW, E = sm._arrays(uq, float(h))
        tot_S, sub_S, tot_R, sub_R = [], [], [], []
        for (ai, bi) in combos:
            tot_S.append(A[ai].T @ A[bi] - W[ai].T @ W[bi])
            sub_S.append(np.einsum("iu,iv->iuv", A[ai], A[bi])
                         - np.add.reduceat(np.einsum("nu,nv->nuv", W[ai], W[bi]),
                                           sm.starts, axis=0))
        for (ai, bi) in combos[:3]:
            tot_R.append(E[ai].T @ E[bi] - eW[ai].T @ eW[bi])
            sub_R.append(np.einsum("iu,iv->iuv", E[ai], E[bi])
                         - np.add.reduceat(np.einsum("nu,nv->nuv", eW[ai], eW[bi]),
                                           sm.starts, axis=0))
        S_fold = [tot[None] - sub for tot, sub in zip(tot_S, sub_S)]
        R_fold = [tot[None] - sub for tot, sub in zip(tot_R, sub_R)]
        sel = (pair_subject, pair_u, pair_v)
        M, rhs = _PairSmoother._stack_systems(
            tuple(Sf[sel] for Sf in S_fold), tuple(Rf[sel] for Rf in R_fold))
        ok = _PairSmoother._solvable(M)
        if not ok.all():
            continue
        pred = np.linalg.solve(M, rhs[..., None])[:, 0, 0]
        cv[a] = float(((pair_prod - pred) ** 2).sum())
    return pick_bandwidth(h_grid, cv), cv


def _select_h2_direct(res, sm, h_grid):
    """Fold-by-fold CV path for designs with many distinct times."""
    m = np.diff(np.append(sm.starts, sm.t.size))
    cv = np.full(h_grid.size, np.inf)
    for a, h in enumerate(h_grid):
        total = 0.0
        feasible = True
        for i in range(sm.n):
            rows = np.arange(sm.starts[i], sm.starts[i] + m[i])
            if rows.size < 2:
                continue
            keep = [k for k in range(sm.n) if k != i]
            held = ResidualSet(tuple(res.times[k] for k in keep),
                               tuple(res.values[k] for k in keep))
            sub = _PairSmoother(held, sm.kernel_family)
            J, Kk = np.meshgrid(rows, rows, indexing="ij")
            off = J != Kk
            u, v = sm.t[J[off]], sm.t[Kk[off]]
            prod = sm.eps[J[off]] * sm.eps[Kk[off]]
            M, rhs = sub.pair_systems(u, v, float(h))
            ok = _PairSmoother._solvable(M)
            if not ok.all():
                feasible = False
                break
            pred = np.linalg.solve(M, rhs[..., None])[:, 0, 0]
            total += float(((prod - pred) ** 2).sum())
        if feasible:
            cv[a] = total
    return pick_bandwidth(h_grid, cv), cv


def select_h3(res, h_grid=None, kernel_family="epanechnikov"):
    """Bandwidth for the variance fit by leave-one-subject-out prediction.

    Predicts each held-out subject's squared residuals from the pooled
    local-linear fit on the remaining subjects.
    """
    h_grid = default_bandwidth_grid() if h_grid is None else np.asarray(h_grid, float)
    if res.n < 2:
        raise NumericError("leave-one-subject-out CV needs at least 2 subjects")
    t = res.stacked_times
    z = res.stacked_values ** 2
    starts = res.row_starts
    m = np.array([v.size for v in res.values])
    subj = np.repeat(np.arange(res.n), m)
    cv = np.full(h_grid.size, np.inf)
    for a, h in enumerate(h_grid):
        spec = KernelSpec(kernel_family, float(h))
        total = 0.0
        try:
            for i in range(res.n):
                mask = subj != i
                pred = local_linear_grid(t[mask], z[mask], res.times[i], spec)
                total += float(((res.values[i] ** 2 - pred) ** 2).sum())
        except NumericError:
            continue
        cv[a] = total
    return pick_bandwidth(h_grid, cv), cv


def estimate_covariance(dataset, fit, h2=None, h3=None, h2_grid=None, h3_grid=None,
                        grid_size=101, kernel_family="epanechnikov"):
    """Full covariance estimate from a fitted semivarying model.

    Computes residuals, selects any unspecified bandwidth by
    leave-one-subject-out CV, fits and truncates the smooth surface, fits
    the variance curve, and assembles the covariance model.
    """
    res = residuals(dataset, fit)
    if h2 is None:
        h2, _ = select_h2(res, h2_grid, kernel_family)
    if h3 is None:
        h3, _ = select_h3(res, h3_grid, kernel_family)
    raw = estimate_psi(res, h2, grid_size, kernel_family)
    psd, lam, funcs = truncate_psd(raw)
    sigma2 = estimate_sigma2(res, h3, grid_size, kernel_family)
    return assemble_phi(psd, sigma2, eigenvalues=lam, eigenfunctions=funcs,
                        h2=float(h2), h3=float(h3))


def write_covariance_csv(model, path):
    """Write the surface and the assembled covariance over the grid as CSV."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "psi", "phi"])
        for i, u in enumerate(model.grid):
            s2u = float(model.sigma2(u))
            for j, v in enumerate(model.grid):
                phi = s2u if i == j else model.psi[i, j]
                writer.writerow([f"{u:.17g}", f"{v:.17g}",
                                 f"{model.psi[i, j]:.17g}", f"{phi:.17g}"])


def write_eigenvalues_csv(model, path):
    """Write the retained eigenvalue spectrum of the smooth surface as CSV."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["component", "eigenvalue"])
        for k, w in enumerate(model.eigenvalues, start=1):
            writer.writerow([k, f"{w:.17g}"])
