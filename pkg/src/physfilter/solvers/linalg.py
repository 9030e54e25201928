"""Dense factorizations for KKT-type systems."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import LinAlgWarning, lapack, lu_factor, lu_solve

from ..errors import DimensionMismatch, SingularMatrix

SINGULAR_RCOND = 1e-12


def _block_pivots(ldu: np.ndarray, ipiv: np.ndarray) -> np.ndarray:
    """Absolute eigenvalues of the 1x1/2x2 diagonal blocks of an upper sytrf factor."""
    n = len(ipiv)
    out = []
    k = n - 1
    while k >= 0:
        if ipiv[k] > 0:
            out.append(abs(ldu[k, k]))
            k -= 1
        else:
            blk = np.array([[ldu[k - 1, k - 1], ldu[k - 1, k]], [ldu[k - 1, k], ldu[k, k]]])
            out.extend(np.abs(np.linalg.eigvalsh(blk)))
            k -= 2
    return np.array(out)


class SymmetricFactor:
    """Bunch-Kaufman (symmetric indefinite, partial pivoting) factorization.

    The matrix counts as singular when its smallest pivot (eigenvalue of a
    diagonal block of D) is below ``rcond_tol * max|M|``. The LAPACK
    reciprocal condition estimate is kept in ``rcond`` for diagnostics.
    """

    def __init__(self, M, rcond_tol: float = SINGULAR_RCOND, check_symmetry: bool = True):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {M.shape}")
        scale = np.max(np.abs(M)) if M.size else 0.0
        if check_symmetry and not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(scale, 1.0)):
            raise DimensionMismatch("matrix is not symmetric")
        self.n = M.shape[0]
        if self.n == 0:
            self.rcond = 1.0
            return
        if scale == 0:
            raise SingularMatrix("zero matrix")
        sytrf, sycon = lapack.get_lapack_funcs(("sytrf", "sycon"), (M,))
        lwork = max(1, 64 * self.n)
        ldu, ipiv, info = sytrf(M, lower=0, lwork=lwork)
        if info > 0:
            raise SingularMatrix(f"exactly singular pivot at position {info}")
        pivots = _block_pivots(ldu, ipiv)
        self.min_pivot = float(pivots.min())
        if not self.min_pivot >= rcond_tol * scale:
            raise SingularMatrix(
                f"smallest pivot {self.min_pivot:.3e} below {rcond_tol:.1e} * max|M|")
        anorm = np.max(np.sum(np.abs(M), axis=0))
        rcond, _ = sycon(ldu, ipiv, anorm, lower=0)
        self.rcond = float(rcond)
        self._ldu, self._ipiv = ldu, ipiv
        (self._sytrs,) = lapack.get_lapack_funcs(("sytrs",), (M,))

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise DimensionMismatch(f"rhs has {rhs.shape[0]} rows, matrix has {self.n}")
        if self.n == 0:
            return rhs.copy()
        x, info = self._sytrs(self._ldu, self._ipiv, rhs, lower=0)
        if info != 0:
            raise SingularMatrix(f"sytrs failed with info={info}")
        return x


def solve_symmetric_indefinite(M, rhs, rcond_tol: float = SINGULAR_RCOND) -> np.ndarray:
    """Solve ``M x = rhs`` for symmetric, possibly indefinite ``M``.

    Multiple right-hand sides may be passed as columns of a 2-D array.
    """
    return SymmetricFactor(M, rcond_tol).solve(rhs)


class GeneralFactor:
    """LU with partial pivoting and the same pivot-relative singularity test."""

    def __init__(self, M, rcond_tol: float = SINGULAR_RCOND):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {M.shape}")
        self.n = M.shape[0]
        if self.n == 0:
            return
        scale = np.max(np.abs(M))
        if scale == 0:
            raise SingularMatrix("zero matrix")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            self._lu = lu_factor(M, check_finite=True)
        self.min_pivot = float(np.min(np.abs(np.diag(self._lu[0]))))
        if not self.min_pivot >= rcond_tol * scale:
            raise SingularMatrix(
                f"smallest pivot {self.min_pivot:.3e} below {rcond_tol:.1e} * max|M|")

    def solve(self, rhs, trans: int = 0) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.n == 0:
            return rhs.copy()
        return lu_solve(self._lu, rhs, trans=trans)
