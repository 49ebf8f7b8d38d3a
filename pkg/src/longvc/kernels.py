"""Kernel primitives, scalar local-linear regression, and leave-one-subject-out
bandwidth cross-validation.

All smoothers in the package route through these helpers so the fallback
policy for thin local designs lives in one place: enlarge the bandwidth by
1.5x up to five times, then fall back to a global weighted linear fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, NumericError

__all__ = ["KernelSpec", "kernel_eval", "local_linear_1d", "local_linear_grid",
           "loso_cv", "default_bandwidth_grid", "KERNEL_FAMILIES"]

_SQRT2PI = np.sqrt(2.0 * np.pi)


def _epanechnikov(z):
    return 0.75 * np.clip(1.0 - z * z, 0.0, None)


def _gaussian(z):
    return np.exp(-0.5 * z * z) / _SQRT2PI


def _uniform(z):
    return 0.5 * (np.abs(z) <= 1.0)


KERNEL_FAMILIES = {
    "epanechnikov": _epanechnikov,
    "gaussian": _gaussian,
    "uniform": _uniform,
}

_MAX_ENLARGE = 5
_ENLARGE_FACTOR = 1.5


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus bandwidth; K_h(u) = K(u/h)/h."""

    family: str = "epanechnikov"
    h: float = 0.1

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}; "
                              f"choose from {sorted(KERNEL_FAMILIES)}")
        if not self.h > 0:
            raise ConfigError("bandwidth must be positive")

    def with_h(self, h):
        return KernelSpec(self.family, h)


def kernel_eval(spec, u):
    """Evaluate K_h(u) elementwise."""
    u = np.asarray(u, dtype=float)
    return KERNEL_FAMILIES[spec.family](u / spec.h) / spec.h


def default_bandwidth_grid(time_range=1.0, size=8):
    """Log-spaced bandwidth grid over [0.05, 0.5] of the time range."""
    return np.geomspace(0.05 * time_range, 0.5 * time_range, size)


def _weighted_linear(t, z, w, t0):
    """Global weighted linear fit, used as the last-resort fallback."""
    dt = t - t0
    sw = w.sum()
    if sw <= 0 or t.size == 0:
        raise NumericError("local fit fallback failed: no usable observations")
    s1 = w @ dt
    s2 = w @ (dt * dt)
    r0 = w @ z
    r1 = w @ (dt * z)
    det = sw * s2 - s1 * s1
    if det <= 1e-14 * max(sw * s2, 1.0):
        # degenerate in t as well: weighted mean, zero slope
        return r0 / sw, 0.0
    a = (s2 * r0 - s1 * r1) / det
    b = (sw * r1 - s1 * r0) / det
    return a, b


def local_linear_1d(t, z, t0, spec, w=None):
    """Local-linear fit of z on t at the point t0.

    Minimizes sum_i w_i K_h(t_i - t0) {z_i - a - b (t_i - t0)}^2 and returns
    (a, b). Reproduces data exactly linear in t for any bandwidth. When the
    kernel support captures fewer than two distinct points the bandwidth is
    enlarged per the module fallback policy.

    Parameters
    ----------
    t, z : arrays of shape (n,)
    t0 : float
        Query point.
    spec : KernelSpec
    w : array, optional
        Extra nonnegative per-point weights (default all ones).
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    w = np.ones_like(t) if w is None else np.asarray(w, dtype=float)
    h = spec.h
    for _ in range(_MAX_ENLARGE + 1):
        kw = w * KERNEL_FAMILIES[spec.family]((t - t0) / h) / h
        res = _try_ll_solve(t, z, kw, t0)
        if res is not None:
            return res
        h *= _ENLARGE_FACTOR
    return _weighted_linear(t, z, w, t0)


def _try_ll_solve(t, z, kw, t0):
    mask = kw > 0
    if mask.sum() < 2:
        return None
    dt = t - t0
    s0 = kw.sum()
    s1 = kw @ dt
    s2 = kw @ (dt * dt)
    det = s0 * s2 - s1 * s1
    scale = s0 * s2
    if det <= 1e-12 * max(scale, 1e-300):
        return None
    r0 = kw @ z
    r1 = kw @ (dt * z)
    a = (s2 * r0 - s1 * r1) / det
    b = (s0 * r1 - s1 * r0) / det
    return float(a), float(b)


def local_linear_grid(t, z, query, spec, w=None):
    """Vectorized local-linear fit at many query points; returns intercepts.

    Equivalent to calling :func:`local_linear_1d` at each query point
    (including the fallback policy) but computes the kernel moment sums for
    all queries at once.
    """
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    query = np.asarray(query, dtype=float)
    w = np.ones_like(t) if w is None else np.asarray(w, dtype=float)

    kfun = KERNEL_FAMILIES[spec.family]
    dt = t[:, None] - query[None, :]  # (n, Q)
    kw = w[:, None] * kfun(dt / spec.h) / spec.h
    s0 = kw.sum(axis=0)
    s1 = (kw * dt).sum(axis=0)
    s2 = (kw * dt * dt).sum(axis=0)
    r0 = z @ kw
    r1 = (z[:, None] * kw * dt).sum(axis=0)
    det = s0 * s2 - s1 * s1
    ok = (det > 1e-12 * np.maximum(s0 * s2, 1e-300)) & ((kw > 0).sum(axis=0) >= 2)
    out = np.empty(query.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        out[ok] = ((s2 * r0 - s1 * r1) / det)[ok]
    for q in np.nonzero(~ok)[0]:
        out[q] = local_linear_1d(t, z, query[q], spec.with_h(spec.h * _ENLARGE_FACTOR), w=w)[0]
    return out


def loso_cv(dataset, fitter, h_grid):
    """Leave-one-subject-out bandwidth selection.

    Parameters
    ----------
    dataset : LongitudinalDataset
    fitter : callable (h, holdout_index) -> predictions
        Returns predicted responses at the held-out subject's observation
        times, fit on all other subjects. May raise NumericError to mark a
        fold infeasible at that bandwidth.
    h_grid : array of candidate bandwidths

    Returns
    -------
    (float, ndarray)
        The bandwidth minimizing CV(h) = sum_i sum_j {y_ij - yhat^(-i)(t_ij)}^2
        with near-ties resolved toward the larger bandwidth, and the CV curve
        (inf where infeasible).
    """
    h_grid = np.asarray(h_grid, dtype=float)
    if h_grid.size == 0:
        raise ConfigError("empty bandwidth grid")
    if dataset.n < 2:
        raise NumericError("leave-one-subject-out CV needs at least 2 subjects")
    cv = np.full(h_grid.size, np.inf)
    for a, h in enumerate(h_grid):
        total = 0.0
        try:
            for i in range(dataset.n):
                pred = fitter(float(h), i)
                resid = dataset.y[i] - np.asarray(pred, dtype=float)
                total += float(resid @ resid)
        except NumericError:
            continue
        cv[a] = total
    return pick_bandwidth(h_grid, cv), cv


def pick_bandwidth(h_grid, cv):
    """Argmin over a CV curve with near-ties going to the larger bandwidth."""
    h_grid = np.asarray(h_grid, dtype=float)
    cv = np.asarray(cv, dtype=float)
    finite = np.isfinite(cv)
    if not finite.any():
        raise NumericError("all bandwidths infeasible in cross-validation")
    best = cv[finite].min()
    thr = best + 1e-10 * (1.0 + abs(best))
    tied = finite & (cv <= thr)
    return float(h_grid[tied].max())
