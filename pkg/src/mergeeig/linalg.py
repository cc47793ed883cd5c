"""Dense symmetric kernels built around a square-root-free LDL^T factorization.

The secure engine in :mod:`mergeeig.mpc` runs the same right-looking
elimination on secret shares, so plaintext and secure log-determinants can be
compared step for step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPSD, NotSymmetric, Singular, ZeroPivot

SYM_RTOL = 1e-9


@dataclass(frozen=True)
class LdlFactors:
    L: np.ndarray
    D: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.L * self.D) @ self.L.T


def check_symmetric(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if A.size and np.max(np.abs(A - A.T)) > SYM_RTOL * scale:
        raise NotSymmetric("matrix is not symmetric within 1e-9 relative")
    return A


def ldl_decompose(A: np.ndarray, pivot_tol: float | None = None) -> LdlFactors:
    """Factor a symmetric PSD matrix as ``L diag(D) L^T`` without pivoting.

    ``pivot_tol`` defaults to ``1e-10 * max|A|``. A pivot below ``-pivot_tol``
    raises :class:`NotPSD`; pivots in ``[-pivot_tol, pivot_tol]`` are kept at
    zero and their column of ``L`` below the diagonal must then vanish.
    """
    A = check_symmetric(A)
    n = A.shape[0]
    if pivot_tol is None:
        pivot_tol = 1e-10 * (np.max(np.abs(A)) if n else 0.0)
    S = A.copy()
    L = np.eye(n)
    D = np.zeros(n)
    for k in range(n):
        d = S[k, k]
        if d < -pivot_tol:
            raise NotPSD(f"pivot {k} is {d:.3e} < -{pivot_tol:.3e}")
        col = S[k + 1 :, k]
        if d <= pivot_tol:
            if np.max(np.abs(col), initial=0.0) > max(pivot_tol, 1e-12):
                raise NotPSD(f"zero pivot {k} with non-zero column below it")
            D[k] = 0.0
            continue
        D[k] = d
        l = col / d
        L[k + 1 :, k] = l
        # Schur complement update of the trailing block
        S[k + 1 :, k + 1 :] -= np.outer(l, col)
    return LdlFactors(L=L, D=D)


def log_det_psd(A: np.ndarray) -> float:
    D = ldl_decompose(A).D
    if np.any(D <= 0):
        raise ZeroPivot("log-determinant needs strictly positive pivots")
    return float(np.sum(np.log(D)))


def _forward_unit(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    X = np.array(B, dtype=float, copy=True)
    for i in range(L.shape[0]):
        X[i] -= L[i, :i] @ X[:i]
    return X


def _backward_unit_T(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    X = np.array(B, dtype=float, copy=True)
    for i in range(L.shape[0] - 1, -1, -1):
        X[i] -= L[i + 1 :, i] @ X[i + 1 :]
    return X


def solve_psd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X = B`` for symmetric positive definite ``A`` via LDL^T."""
    f = ldl_decompose(A)
    B = np.asarray(B, dtype=float)
    if B.shape[0] != f.L.shape[0]:
        raise DimensionMismatch(f"rhs has {B.shape[0]} rows, matrix is {f.L.shape[0]}")
    if np.any(f.D <= 0):
        raise Singular("matrix has a zero pivot")
    Z = _forward_unit(f.L, B)
    Z = (Z.T / f.D).T
    return _backward_unit_T(f.L, Z)


def gram(Phi: np.ndarray) -> np.ndarray:
    Phi = np.asarray(Phi, dtype=float)
    if Phi.ndim == 1:
        Phi = Phi[:, None]
    G = Phi.T @ Phi
    return 0.5 * (G + G.T)
