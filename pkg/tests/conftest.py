import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def svd_ridge(A, Y, lam):
    """Ridge minimizer through the SVD: W = V diag(s / (s^2 + lam)) U^T Y."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return Vt.T @ ((s / (s * s + lam))[:, None] * (U.T @ Y))


def conditioned_matrix(rng, n, p, cond):
    """Random n x p matrix with singular values log-spaced from 1 down to 1/cond."""
    U, _ = np.linalg.qr(rng.standard_normal((n, p)))
    V, _ = np.linalg.qr(rng.standard_normal((p, p)))
    s = np.logspace(0, -np.log10(cond), p)
    return (U * s) @ V.T


def rel_err(a, b):
    denom = np.linalg.norm(b)
    return np.linalg.norm(a - b) / (denom if denom > 0 else 1.0)
