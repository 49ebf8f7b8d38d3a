"""Longitudinal data containers, CSV ingestion, and the subject-weighted
empirical inner products used by every estimator in the package.

The empirical inner product of two processes u, v sampled at the subject
observation times is

    <u, v'>_n = (1/n) sum_i (1/m_i) sum_j u_i(t_ij) v_i(t_ij)'

so each subject carries total weight 1/n regardless of how often it was
observed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError

__all__ = [
    "LongitudinalDataset",
    "SampledFunction",
    "empirical_inner",
    "empirical_norm_sq",
    "load_long_csv",
    "write_long_csv",
]


class LongitudinalDataset:
    """Irregular longitudinal observations on [0, 1].

    Parameters
    ----------
    times : sequence of 1d arrays
        Per-subject observation times, each nondecreasing and inside [0, 1].
    y : sequence of 1d arrays
        Responses aligned with ``times``.
    covariates : sequence of 2d arrays
        One ``p x m_i`` matrix per subject; row k holds covariate k sampled
        at that subject's times.
    names : sequence of str, optional
        Unique covariate labels. Defaults to ``x1 .. xp``.
    subject_ids : sequence of str, optional
        Labels used when serializing. Defaults to ``1 .. n``.

    Notes
    -----
    Instances are treated as immutable once constructed; every operation in
    the package reads but never mutates them. Besides the per-subject arrays
    the constructor precomputes stacked row-major views (``stacked_times``,
    ``stacked_y``, ``stacked_x``, ``subject_of``, ``weights``) that the
    estimators use for vectorized work. ``weights`` holds 1/(n m_i) per row,
    the weight each observation carries in the empirical inner product.
    """

    def __init__(self, times, y, covariates, names=None, subject_ids=None):
        times = [np.asarray(t, dtype=float) for t in times]
        y = [np.asarray(v, dtype=float) for v in y]
        covariates = [np.asarray(X, dtype=float) for X in covariates]
        n = len(times)
        if n == 0:
            raise DataError("dataset needs at least one subject")
        if len(y) != n or len(covariates) != n:
            raise DataError("times, y and covariates must have one entry per subject")

        p = None
        for i, (t, v, X) in enumerate(zip(times, y, covariates)):
            if t.ndim != 1 or t.size < 1:
                raise DataError(f"subject {i + 1}: needs at least one observation")
            if np.any(t < 0.0) or np.any(t > 1.0):
                raise DataError(f"subject {i + 1}: times must lie in [0, 1]")
            if np.any(np.diff(t) < 0):
                raise DataError(f"subject {i + 1}: times must be nondecreasing")
            if v.shape != t.shape:
                raise DataError(f"subject {i + 1}: y length differs from times")
            if X.ndim != 2 or X.shape[1] != t.size:
                raise DataError(
                    f"subject {i + 1}: covariate matrix must be p x m_i "
                    f"(got shape {X.shape} for m_i={t.size})"
                )
            if p is None:
                p = X.shape[0]
            elif X.shape[0] != p:
                raise DataError(f"subject {i + 1}: covariate count differs across subjects")
            if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v)) and np.all(np.isfinite(X))):
                raise DataError(f"subject {i + 1}: non-finite value")

        if names is None:
            names = [f"x{k + 1}" for k in range(p)]
        names = [str(s) for s in names]
        if len(names) != p:
            raise DataError("need one name per covariate")
        if len(set(names)) != p:
            raise DataError("covariate names must be unique")
        if subject_ids is None:
            subject_ids = [str(i + 1) for i in range(n)]
        subject_ids = [str(s) for s in subject_ids]
        if len(subject_ids) != n or len(set(subject_ids)) != n:
            raise DataError("subject ids must be unique, one per subject")

        self.times = tuple(t.copy() for t in times)
        self.y = tuple(v.copy() for v in y)
        self.covariates = tuple(X.copy() for X in covariates)
        self.names = tuple(names)
        self.subject_ids = tuple(subject_ids)
        self.n = n
        self.p = p
        self.m = np.array([t.size for t in self.times], dtype=int)
        self.N = int(self.m.sum())

        # stacked views
        self.stacked_times = np.concatenate(self.times)
        self.stacked_y = np.concatenate(self.y)
        self.stacked_x = np.concatenate([X.T for X in self.covariates], axis=0)
        self.subject_of = np.repeat(np.arange(n), self.m)
        self.weights = np.repeat(1.0 / (n * self.m), self.m)
        ends = np.cumsum(self.m)
        starts = ends - self.m
        self.row_slices = tuple(slice(int(a), int(b)) for a, b in zip(starts, ends))

    def split_rows(self, rows):
        """Split a stacked (N,) or (N, d) array back into per-subject arrays."""
        rows = np.asarray(rows)
        return tuple(rows[s] for s in self.row_slices)

    def subset_subjects(self, idx):
        """New dataset containing the listed subjects (repeats allowed, e.g.
        for a subject-level bootstrap resample)."""
        idx = list(idx)
        ids = []
        for pos, i in enumerate(idx):
            ids.append(f"{self.subject_ids[i]}#{pos}")
        return LongitudinalDataset(
            [self.times[i] for i in idx],
            [self.y[i] for i in idx],
            [self.covariates[i] for i in idx],
            names=self.names,
            subject_ids=ids,
        )


@dataclass(frozen=True)
class SampledFunction:
    """A process sampled at the observation times of some dataset.

    ``values`` holds one array per subject: shape ``(m_i,)`` for a scalar
    process or ``(d, m_i)`` for a vector-valued one.
    """

    values: tuple

    def __post_init__(self):
        vals = tuple(np.asarray(v, dtype=float) for v in self.values)
        if not vals:
            raise DataError("empty SampledFunction")
        d = None
        for v in vals:
            if v.ndim not in (1, 2):
                raise DataError("per-subject values must be 1d or 2d arrays")
            vd = 1 if v.ndim == 1 else v.shape[0]
            if d is None:
                d = vd
            elif vd != d:
                raise DataError("inconsistent value dimension across subjects")
        object.__setattr__(self, "values", vals)

    @property
    def n(self):
        return len(self.values)

    @property
    def dim(self):
        v = self.values[0]
        return 1 if v.ndim == 1 else v.shape[0]

    @property
    def is_scalar(self):
        return self.values[0].ndim == 1

    @classmethod
    def sample(cls, dataset, fn):
        """Sample a deterministic function t -> scalar at all dataset times."""
        return cls(tuple(np.asarray(fn(t), dtype=float) for t in dataset.times))

    @classmethod
    def constant(cls, dataset, c):
        return cls(tuple(np.full(t.shape, float(c)) for t in dataset.times))

    @classmethod
    def from_stacked(cls, dataset, rows):
        """Wrap a stacked (N,) or (d, N) array as a per-subject function."""
        rows = np.asarray(rows, dtype=float)
        if rows.ndim == 1:
            return cls(dataset.split_rows(rows))
        return cls(tuple(rows[:, s] for s in dataset.row_slices))


def _as_sampled(u):
    if isinstance(u, SampledFunction):
        return u
    return SampledFunction(tuple(u))


def empirical_inner(u, v):
    """Empirical inner product <u, v'>_n.

    Parameters
    ----------
    u, v : SampledFunction
        Sampled on the same dataset (their per-subject lengths must agree).

    Returns
    -------
    float or ndarray
        A scalar when both arguments are scalar processes, otherwise the
        k x l matrix (1/n) sum_i (1/m_i) sum_j u_i(t_ij) v_i(t_ij)'.
    """
    u = _as_sampled(u)
    v = _as_sampled(v)
    if u.n != v.n:
        raise DataError("u and v sampled on different subject counts")
    n = u.n
    out = np.zeros((u.dim, v.dim))
    for ui, vi in zip(u.values, v.values):
        ua = np.atleast_2d(ui)
        va = np.atleast_2d(vi)
        if ua.shape[1] != va.shape[1]:
            raise DataError("u and v sampled at different within-subject designs")
        out += (ua @ va.T) / ua.shape[1]
    out /= n
    if u.is_scalar and v.is_scalar:
        return float(out[0, 0])
    return out


def empirical_norm_sq(u):
    """Squared empirical norm ||u||_n^2 = <u, u>_n of a scalar process."""
    u = _as_sampled(u)
    if not u.is_scalar:
        raise DataError("empirical_norm_sq expects a scalar process")
    return empirical_inner(u, u)


def _parse_float(cell, row_no, col):
    try:
        return float(cell)
    except (TypeError, ValueError):
        raise DataError(f"row {row_no}: non-numeric value {cell!r} in column {col!r}") from None


def load_long_csv(path, normalize_times=False):
    """Load a long-format CSV into a :class:`LongitudinalDataset`.

    The file must have header ``subject,time,y,x1,...,xp``. Rows may appear
    in any order; they are grouped by subject id (subjects keep first-
    appearance order) and sorted by time within subject, ties keeping input
    order. With ``normalize_times`` the times are affinely mapped onto
    [0, 1] by the global min and max; otherwise any time outside [0, 1]
    raises a :class:`DataError` naming the offending row.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file: missing header") from None
        header = [h.strip() for h in header]
        if len(header) < 4 or header[:3] != ["subject", "time", "y"]:
            raise DataError("header must be 'subject,time,y,x1,...,xp' with at least one covariate")
        names = header[3:]
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate column names")
        p = len(names)

        order = []  # subject ids in first-appearance order
        rows = {}  # id -> list of (time, y, x vector, file row number)
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and row[0].strip() == ""):
                continue
            if len(row) != 3 + p:
                raise DataError(f"row {row_no}: expected {3 + p} fields, got {len(row)}")
            sid = row[0].strip()
            if sid == "":
                raise DataError(f"row {row_no}: empty subject id")
            t = _parse_float(row[1], row_no, "time")
            yv = _parse_float(row[2], row_no, "y")
            xv = np.array([_parse_float(row[3 + k], row_no, names[k]) for k in range(p)])
            if sid not in rows:
                rows[sid] = []
                order.append(sid)
            rows[sid].append((t, yv, xv, row_no))

    if not order:
        raise DataError("no data rows")

    if normalize_times:
        all_t = [r[0] for sid in order for r in rows[sid]]
        lo, hi = min(all_t), max(all_t)
        if hi <= lo:
            raise DataError("cannot normalize times: all observation times are equal")
        scale = hi - lo
    else:
        for sid in order:
            for t, _, _, row_no in rows[sid]:
                if t < 0.0 or t > 1.0:
                    raise DataError(
                        f"row {row_no}: time {t} outside [0, 1] (pass normalize_times to rescale)"
                    )

    times, ys, xs = [], [], []
    for sid in order:
        recs = sorted(rows[sid], key=lambda r: r[0])  # stable: ties keep input order
        t = np.array([r[0] for r in recs])
        if normalize_times:
            t = (t - lo) / scale
        times.append(t)
        ys.append(np.array([r[1] for r in recs]))
        xs.append(np.column_stack([r[2] for r in recs]))

    return LongitudinalDataset(times, ys, xs, names=names, subject_ids=order)


def write_long_csv(dataset, path):
    """Serialize a dataset in the long format read by :func:`load_long_csv`.

    Floats are written with 17 significant digits so a round trip through
    the loader reproduces the dataset bit for bit.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "time", "y"] + list(dataset.names))
        for i in range(dataset.n):
            t, yv, X = dataset.times[i], dataset.y[i], dataset.covariates[i]
            for j in range(t.size):
                writer.writerow(
                    [dataset.subject_ids[i], f"{t[j]:.17g}", f"{yv[j]:.17g}"]
                    + [f"{X[k, j]:.17g}" for k in range(dataset.p)]
                )
