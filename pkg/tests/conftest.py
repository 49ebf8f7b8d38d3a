import numpy as np
import pytest
import scipy.linalg

from longvc.data import LongitudinalDataset


def random_dataset(n=5, m=4, p=3, seed=0, grid=False):
    """Small random dataset for unit tests.

    m may be an int (same count per subject) or a sequence of counts.
    With grid=True all subjects share the same equispaced times.
    """
    rng = np.random.default_rng(seed)
    if np.isscalar(m):
        m = [int(m)] * n
    times, ys, xs = [], [], []
    for mi in m:
        if grid:
            t = np.linspace(0.0, 1.0, mi)
        else:
            t = np.sort(rng.uniform(0.0, 1.0, size=mi))
        times.append(t)
        ys.append(rng.standard_normal(mi))
        xs.append(rng.standard_normal((p, mi)))
    return LongitudinalDataset(times, ys, xs)


@pytest.fixture
def toy_dataset():
    return random_dataset(n=5, m=4, p=3, seed=0)


def _epanechnikov_w(dt, h):
    return 0.75 * np.clip(1.0 - (dt / h) ** 2, 0.0, None) / h


def dense_profile_oracle(dataset, constant_idx, varying_idx, h, blocks=None):
    """Brute-force profiled fit with explicit dense matrices.

    Assembles the smoother matrix row by row (one dense local solve per
    observation), residualizes the response and the constant-coefficient
    columns, and solves the profiled least squares problem directly. With
    covariance blocks supplied, each local solve weights by the dense matrix
    sqrt(W) A sqrt(W), where A is the block-diagonal inverse covariance, and
    the profiled step grams the residual columns against A. Returns
    (beta1, local_solution) where local_solution(t0, beta1) gives all
    2(s2+1) local coordinates at t0.
    """
    N = dataset.N
    T = dataset.stacked_times
    Y = dataset.stacked_y
    X = dataset.stacked_x
    U = np.column_stack([np.ones(N)] + [X[:, k] for k in varying_idx])
    X1 = X[:, list(constant_idx)] if constant_idx else np.zeros((N, 0))
    k = U.shape[1]
    if blocks is None:
        lam_inv = np.eye(N)
    else:
        lam_inv = scipy.linalg.block_diag(
            *[np.linalg.inv(np.asarray(B, dtype=float)) for B in blocks]
        )

    def local_weight(t0):
        s = np.sqrt(_epanechnikov_w(T - t0, h))
        return s[:, None] * lam_inv * s[None, :]

    def full_local(t0, Z):
        V = np.column_stack([U, (T - t0)[:, None] * U])
        M = local_weight(t0)
        return np.linalg.solve(V.T @ M @ V, V.T @ M @ Z)

    S = np.zeros((N, N))
    for r in range(N):
        t0 = T[r]
        V = np.column_stack([U, (T - t0)[:, None] * U])
        M = local_weight(t0)
        H = np.linalg.solve(V.T @ M @ V, V.T @ M)
        e = np.zeros(2 * k)
        e[:k] = U[r]
        e[k:] = 0.0
        S[r] = e @ H
    I_S = np.eye(N) - S
    if X1.shape[1]:
        A = X1.T @ I_S.T @ lam_inv @ I_S @ X1
        b = X1.T @ I_S.T @ lam_inv @ I_S @ Y
        beta1 = np.linalg.solve(A, b)
    else:
        beta1 = np.zeros(0)

    def local_solution(t0, beta1_val):
        return full_local(t0, Y - X1 @ np.asarray(beta1_val, dtype=float))

    return beta1, local_solution
