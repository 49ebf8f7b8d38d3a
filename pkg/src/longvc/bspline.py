"""Equispaced B-spline basis on [0, 1]: evaluation, exact integrals, and the
split of a spline into its mean level and a mean-zero functional part.

Order follows the convention where order = degree + 1, so the default
order 3 gives quadratic splines. The basis has full-multiplicity boundary
knots and L - order equispaced interior knots.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import BSpline

from .exceptions import ConfigError

__all__ = ["BSplineBasis", "CenteredBasis", "make_basis", "eval_basis",
           "basis_integrals", "decompose", "default_dimension"]


def default_dimension(n, order=3):
    """Default basis dimension for a sample of n subjects.

    Uses round(2.5 * n**(1/5)) clamped to [order, 15]; n = 100 gives 6.
    """
    return int(np.clip(round(2.5 * n ** 0.2), order, 15))


class BSplineBasis:
    """Equispaced B-spline basis of dimension L and given order on [0, 1]."""

    def __init__(self, L, order=3):
        L = int(L)
        order = int(order)
        if order < 1:
            raise ConfigError("order must be >= 1")
        if L < order:
            raise ConfigError(f"basis dimension L={L} must be >= order={order}")
        self.L = L
        self.order = order
        self.degree = order - 1
        n_interior = L - order
        interior = np.arange(1, n_interior + 1) / (n_interior + 1)
        self.knots = np.concatenate([np.zeros(order), interior, np.ones(order)])
        self._spl = BSpline(self.knots, np.eye(L), self.degree, extrapolate=False)
        # breakpoints of the piecewise-polynomial segments
        self.breaks = np.concatenate([[0.0], interior, [1.0]])
        self._quad = None
        self._tau = None
        self._gram = None
        self._centered = None

    def __repr__(self):
        return f"BSplineBasis(L={self.L}, order={self.order})"

    def eval(self, t):
        """Evaluate all basis functions at t.

        Parameters
        ----------
        t : float or array
            Points in [0, 1].

        Returns
        -------
        ndarray
            Shape ``t.shape + (L,)``; rows are nonnegative and sum to 1.
        """
        t = np.asarray(t, dtype=float)
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise ConfigError("evaluation points must lie in [0, 1]")
        out = BSpline.design_matrix(np.atleast_1d(t).ravel(), self.knots, self.degree).toarray()
        return out.reshape(t.shape + (self.L,))

    def quadrature(self, npts=None):
        """Gauss-Legendre nodes/weights per knot span, concatenated.

        Exact for piecewise polynomials up to degree 2*npts - 1 on each
        span; the default npts covers products of two basis functions.
        """
        if npts is None and self._quad is not None:
            return self._quad
        k = npts or max(5, self.order)
        xg, wg = np.polynomial.legendre.leggauss(k)
        nodes, weights = [], []
        for a, b in zip(self.breaks[:-1], self.breaks[1:]):
            half = 0.5 * (b - a)
            nodes.append(0.5 * (a + b) + half * xg)
            weights.append(half * wg)
        q = (np.concatenate(nodes), np.concatenate(weights))
        if npts is None:
            self._quad = q
        return q

    @property
    def integrals(self):
        """tau_j = integral of B_j over [0, 1]; the tau_j sum to 1."""
        if self._tau is None:
            nodes, w = self.quadrature()
            self._tau = w @ self.eval(nodes)
        return self._tau

    @property
    def gram(self):
        """L x L matrix of L2 products integral B_i B_j."""
        if self._gram is None:
            nodes, w = self.quadrature()
            V = self.eval(nodes)
            self._gram = V.T @ (w[:, None] * V)
        return self._gram

    @property
    def centered(self):
        if self._centered is None:
            self._centered = CenteredBasis(self)
        return self._centered

    def l2_norm_sq(self, gamma):
        """Squared L2 norm of the spline with coefficients gamma."""
        gamma = np.asarray(gamma, dtype=float)
        return float(gamma @ self.gram @ gamma)


class CenteredBasis:
    """Change of basis from (B_1..B_L) to (1, C_2..C_L), C_j = B_j - tau_j.

    The constant function and the mean-zero C_j span the same space as the
    original basis, so a spline g = gamma' B splits into its integral
    c = tau' gamma and a functional part with coefficients d on C_2..C_L.
    The split makes "constant coefficient" a coordinate statement: g is
    constant exactly when d = 0.
    """

    def __init__(self, parent):
        self.parent = parent
        L = parent.L
        tau = parent.integrals
        self.tau = tau
        # columns of from_centered are the B-coordinates of (1, C_2..C_L)
        M = np.zeros((L, L))
        M[:, 0] = 1.0
        for j in range(1, L):
            M[j, j] = 1.0
            M[:, j] -= tau[j]
        self.from_centered = M
        Minv = np.zeros((L, L))
        Minv[0, :] = tau
        for j in range(1, L):
            Minv[j, 0] = -1.0
            Minv[j, j] = 1.0
        self.to_centered = Minv
        # L2 Gram of the functional basis: <C_i, C_j> = <B_i, B_j> - tau_i tau_j
        G = parent.gram
        self.fun_gram = (G - np.outer(tau, tau))[1:, 1:]

    def split(self, gamma):
        """Coefficients gamma of g in B coordinates -> (c, d).

        c is the integral of g; d (length L-1) are the coordinates of the
        mean-zero part on C_2..C_L.
        """
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (self.parent.L,):
            raise ConfigError(f"expected coefficient vector of length {self.parent.L}")
        theta = self.to_centered @ gamma
        return float(theta[0]), theta[1:]

    def merge(self, c, d):
        """Inverse of :meth:`split`: back to B coordinates."""
        theta = np.concatenate([[c], np.asarray(d, dtype=float)])
        return self.from_centered @ theta

    def fun_norm_sq(self, d):
        """Squared L2 norm of the functional part with coordinates d."""
        d = np.asarray(d, dtype=float)
        return float(d @ self.fun_gram @ d)


def make_basis(L, order=3):
    """Construct an equispaced :class:`BSplineBasis` (see class docs)."""
    return BSplineBasis(L, order)


def eval_basis(basis, t):
    """Functional form of :meth:`BSplineBasis.eval`."""
    return basis.eval(t)


def basis_integrals(basis):
    """Functional form of :attr:`BSplineBasis.integrals`."""
    return basis.integrals


def decompose(basis, gamma):
    """Split the spline gamma' B into (integral, mean-zero part).

    Returns
    -------
    (float, ndarray)
        The constant part c and the centered coordinates d of the
        functional part, such that ``basis.centered.merge(c, d) == gamma``.
    """
    return basis.centered.split(gamma)
