"""Dense ridge regression and incremental pseudoinverse updates.

Matrices are plain C-ordered ``float64`` numpy arrays. Every public function
validates shapes and finiteness of its inputs and returns fresh arrays.
"""

from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NumericalFailure


class PinvUpdate(NamedTuple):
    pinv: np.ndarray
    D: np.ndarray
    B_T: np.ndarray
    full_rank: bool  # True when the residual block C was nonzero


def as_matrix(a, name="matrix"):
    """Coerce ``a`` to a finite 2-D float64 array (1-D input becomes a column)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalFailure(f"{name} contains non-finite entries")
    return np.ascontiguousarray(m)


def _check_lambda(lam):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")


def _regularized_gram(A, lam):
    G = A.T @ A
    G[np.diag_indices_from(G)] += lam
    return G


def cho_factor_spd(G):
    """Cholesky factor of a symmetric positive-definite matrix."""
    try:
        return scipy.linalg.cho_factor(G, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"Cholesky factorization failed: {exc}") from exc


def _finite(out, what):
    if not np.all(np.isfinite(out)):
        raise NumericalFailure(f"{what} produced non-finite values")
    return out


def ridge_solve(A, Y, lam):
    """Minimizer of ``||A W - Y||_F^2 + lam ||W||_F^2``.

    Solves the regularized normal equations ``(A^T A + lam I) W = A^T Y`` by
    Cholesky. A 1-D ``Y`` yields a 1-D result.
    """
    _check_lambda(lam)
    vector_out = np.ndim(Y) == 1
    A = as_matrix(A, "A")
    Y = as_matrix(Y, "Y")
    if A.shape[0] != Y.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but Y has {Y.shape[0]}")
    factor = cho_factor_spd(_regularized_gram(A, lam))
    W = _finite(scipy.linalg.cho_solve(factor, A.T @ Y, check_finite=False), "ridge_solve")
    return W[:, 0] if vector_out else W


def pinv_ridge(A, lam):
    """Regularized pseudoinverse ``(A^T A + lam I)^{-1} A^T``."""
    _check_lambda(lam)
    A = as_matrix(A, "A")
    factor = cho_factor_spd(_regularized_gram(A, lam))
    return _finite(scipy.linalg.cho_solve(factor, A.T, check_finite=False), "pinv_ridge")


def residual_tolerance(H):
    return 1e-9 * (1.0 + np.linalg.norm(H))


def pinv_append_columns(A, A_pinv, H_new, lam, c_tol=None):
    """Pseudoinverse of ``[A | H_new]`` from the pseudoinverse of ``A``.

    ``D = A^+ H`` and ``C = H - A D``. When ``||C||_F > c_tol`` the new rows
    are the regularized pseudoinverse of ``C``, otherwise
    ``(I + D^T D)^{-1} D^T A^+``. The regularized branch includes the
    ``lam * D^T D`` coupling term, which makes the result equal to
    ``pinv_ridge([A | H_new], lam)`` and reduces to ``C^+`` as ``lam -> 0``.
    """
    _check_lambda(lam)
    A = as_matrix(A, "A")
    A_pinv = as_matrix(A_pinv, "A_pinv")
    H = as_matrix(H_new, "H_new")
    N, p = A.shape
    if A_pinv.shape != (p, N):
        raise DimensionMismatch(f"A_pinv shape {A_pinv.shape} does not match A {A.shape}")
    if H.shape[0] != N:
        raise DimensionMismatch(f"H_new has {H.shape[0]} rows, A has {N}")
    q = H.shape[1]
    if q < 1:
        raise ValueError("H_new must have at least one column")
    if c_tol is None:
        c_tol = residual_tolerance(H)

    D = A_pinv @ H
    C = H - A @ D
    eye = np.eye(q)
    full_rank = bool(np.linalg.norm(C) > c_tol)
    if full_rank:
        S = C.T @ C + lam * (eye + D.T @ D)
        B_T = scipy.linalg.cho_solve(cho_factor_spd(S), C.T, check_finite=False)
    else:
        S = eye + D.T @ D
        B_T = scipy.linalg.cho_solve(cho_factor_spd(S), D.T @ A_pinv, check_finite=False)
    pinv = np.vstack([A_pinv - D @ B_T, B_T])
    return PinvUpdate(_finite(pinv, "pinv_append_columns"), D, B_T, full_rank)


class RidgeAppend(NamedTuple):
    factor: tuple
    D: np.ndarray
    BtY: np.ndarray


def ridge_append_columns(A, factor, H_new, Y, lam):
    """Block update of a ridge fit when columns ``H_new`` are appended to ``A``.

    ``factor`` is the lower Cholesky factor of ``A^T A + lam I``. Returns the
    extended factor, ``D = (A^T A + lam I)^{-1} A^T H`` and ``B^T Y``, so the
    new weights are ``[W - D B^T Y ; B^T Y]``. Same algebra as
    ``pinv_append_columns`` but every solve goes through the factor, which
    keeps its accuracy when ``A`` is numerically rank deficient.
    """
    _check_lambda(lam)
    A = as_matrix(A, "A")
    H = as_matrix(H_new, "H_new")
    Y = as_matrix(Y, "Y")
    L = np.tril(factor[0])
    N, p = A.shape
    if L.shape != (p, p):
        raise DimensionMismatch(f"factor shape {L.shape} does not match A {A.shape}")
    if H.shape[0] != N or Y.shape[0] != N:
        raise DimensionMismatch("H_new and Y must have as many rows as A")
    q = H.shape[1]
    if q < 1:
        raise ValueError("H_new must have at least one column")

    L21 = scipy.linalg.solve_triangular(L, A.T @ H, lower=True, check_finite=False)
    S = H.T @ H - L21.T @ L21
    S[np.diag_indices_from(S)] += lam
    L22 = cho_factor_spd(S)[0]
    L22 = np.tril(L22)
    D = scipy.linalg.solve_triangular(L, L21, lower=True, trans="T", check_finite=False)
    LtY = scipy.linalg.solve_triangular(L, A.T @ Y, lower=True, check_finite=False)
    BtY = scipy.linalg.cho_solve((L22, True), H.T @ Y - L21.T @ LtY, check_finite=False)
    L_new = np.zeros((p + q, p + q))
    L_new[:p, :p] = L
    L_new[p:, :p] = L21.T
    L_new[p:, p:] = L22
    return RidgeAppend((L_new, True), D, _finite(BtY, "ridge_append_columns"))


def ridge_residual_rmse(A, W, Y):
    R = as_matrix(A) @ as_matrix(W) - as_matrix(Y)
    return float(np.sqrt(np.mean(R * R))) if R.size else 0.0
