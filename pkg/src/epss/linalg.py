"""Sparse and dense kernels shared by the rest of the package.

Sparse matrices are plain ``scipy.sparse.csr_matrix`` objects kept in
canonical form (sorted column indices, no duplicates, no stored zeros);
:func:`as_csr` enforces that.  Dense matrices are 2-D ``numpy`` arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

Matrix = Union[np.ndarray, sp.spmatrix, sp.sparray]

PIVOT_TOL = 1e-14
# threshold pivoting: full partial pivoting wrecks the symmetric ordering's fill
DIAG_PIVOT_THRESH = 1e-3
MAX_DENSE_EIG = 2000


class DimensionError(ValueError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class EigenvalueError(np.linalg.LinAlgError):
    pass


def as_csr(A: Matrix) -> sp.csr_matrix:
    """Return ``A`` as a canonical CSR matrix (a copy when ``A`` is sparse)."""
    M = sp.csr_matrix(A, dtype=float, copy=True)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


def is_canonical(A: sp.csr_matrix) -> bool:
    ptr = A.indptr
    if len(ptr) != A.shape[0] + 1 or ptr[-1] != A.nnz or np.any(np.diff(ptr) < 0):
        return False
    if np.any(A.data == 0.0):
        return False
    for i in range(A.shape[0]):
        cols = A.indices[ptr[i]:ptr[i + 1]]
        if np.any(np.diff(cols) <= 0):
            return False
    return True


def to_dense(A: Matrix) -> np.ndarray:
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float)


def spmv(A: Matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != A.shape[1]:
        raise DimensionError(f"spmv: matrix has {A.shape[1]} columns, vector has length {x.shape}")
    return np.asarray(A @ x).ravel()


def transpose(A: Matrix) -> sp.csr_matrix:
    return as_csr(sp.csr_matrix(A).T)


@dataclass(frozen=True)
class LUFactors:
    """Permuted LU factors of a square matrix.

    ``kind`` is ``"sparse"`` (SuperLU with a symmetric fill-reducing ordering)
    or ``"dense"`` (LAPACK getrf with partial pivoting).
    """

    kind: str
    n: int
    handle: object

    def solve(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape[0] != self.n:
            raise DimensionError(f"LU solve: order {self.n}, rhs length {r.shape[0]}")
        if self.kind == "sparse":
            return self.handle.solve(r)
        return sla.lu_solve(self.handle, r, check_finite=False)

    @property
    def row_perm(self) -> np.ndarray:
        if self.kind == "sparse":
            return self.handle.perm_r
        piv = self.handle[1]
        perm = np.arange(self.n)
        for i, p in enumerate(piv):
            perm[i], perm[p] = perm[p], perm[i]
        return perm

    @property
    def col_perm(self) -> np.ndarray:
        if self.kind == "sparse":
            return self.handle.perm_c
        return np.arange(self.n)

    def upper_diagonal(self) -> np.ndarray:
        if self.kind == "sparse":
            return self.handle.U.diagonal()
        return np.diag(self.handle[0]).copy()


def _max_abs(A: Matrix) -> float:
    if sp.issparse(A):
        return float(abs(A).max()) if A.nnz else 0.0
    return float(np.max(np.abs(A))) if A.size else 0.0


def lu_factor(A: Matrix) -> LUFactors:
    """Factor a square matrix.

    Sparse input goes through SuperLU with the minimum-degree ordering of
    ``A + A^T`` (a symmetric fill-reducing permutation) and threshold
    pivoting that prefers the diagonal; dense input through
    LAPACK with partial pivoting.  A pivot below ``1e-14 * max|a_ij|`` raises
    :class:`SingularMatrixError` carrying the offending pivot index.
    """
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"lu_factor needs a square matrix, got {A.shape}")
    n = A.shape[0]
    scale = _max_abs(A)
    thresh = PIVOT_TOL * scale
    if scale == 0.0:
        raise SingularMatrixError("matrix is zero", index=0)
    if sp.issparse(A):
        try:
            handle = spla.splu(
                sp.csc_matrix(A, dtype=float),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=DIAG_PIVOT_THRESH,
            )
        except RuntimeError as exc:
            index = _dense_zero_pivot(to_dense(A), thresh) if n <= 5000 else None
            raise SingularMatrixError(f"sparse LU failed ({exc}); zero pivot at {index}", index) from exc
        factors = LUFactors("sparse", n, handle)
    else:
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)  # reported below instead
            handle = sla.lu_factor(np.asarray(A, dtype=float), check_finite=False)
        factors = LUFactors("dense", n, handle)
    small = np.flatnonzero(~(np.abs(factors.upper_diagonal()) > thresh))
    if small.size:
        raise SingularMatrixError(f"zero pivot at index {small[0]}", index=int(small[0]))
    return factors


def _dense_zero_pivot(A: np.ndarray, thresh: float) -> Optional[int]:
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, _ = sla.lu_factor(A, check_finite=False)
    small = np.flatnonzero(~(np.abs(np.diag(lu)) > thresh))
    return int(small[0]) if small.size else None


def triangular_solve(T: Matrix, r: np.ndarray, lower: bool = True) -> np.ndarray:
    """Forward (``lower``) or backward substitution with a sparse triangular matrix.

    ``r`` may be a vector or a 2-D block of right-hand sides.
    """
    T = sp.csr_matrix(T)
    r = np.asarray(r, dtype=float)
    if T.shape[0] != T.shape[1] or r.shape[0] != T.shape[0]:
        raise DimensionError(f"triangular_solve: matrix {T.shape}, rhs {r.shape}")
    zero = np.flatnonzero(T.diagonal() == 0.0)
    if zero.size:
        raise SingularMatrixError(f"zero diagonal entry in row {zero[0]}", index=int(zero[0]))
    return spla.spsolve_triangular(T, r, lower=lower)


def dense_eigenvalues(A: Matrix) -> np.ndarray:
    """Full complex spectrum of a dense matrix (LAPACK Hessenberg + shifted QR)."""
    A = to_dense(A)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"eigenvalues need a square matrix, got {A.shape}")
    if A.shape[0] > MAX_DENSE_EIG:
        raise DimensionError(f"order {A.shape[0]} exceeds the dense limit {MAX_DENSE_EIG}")
    try:
        return sla.eigvals(A, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenvalueError(f"QR iteration failed: {exc}") from exc


def spectral_radius(A: Matrix) -> float:
    return float(np.max(np.abs(dense_eigenvalues(A)))) if A.shape[0] else 0.0


def rank_with_tol(A: Matrix, tol: float = 1e-8) -> int:
    """Number of singular values above ``tol * sigma_max``."""
    A = to_dense(A)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def null_space(A: Matrix, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical null space, relative tolerance."""
    A = to_dense(A)
    if A.shape[1] == 0:
        return np.zeros((0, 0))
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    _, s, vt = np.linalg.svd(A)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * smax)) if smax > 0 else 0
    return vt[rank:].T.copy()


def symmetric_part(A: Matrix) -> Matrix:
    if sp.issparse(A):
        return as_csr((A + A.T) * 0.5)
    A = np.asarray(A, dtype=float)
    return 0.5 * (A + A.T)


def skew_part(A: Matrix) -> Matrix:
    if sp.issparse(A):
        return as_csr((A - A.T) * 0.5)
    A = np.asarray(A, dtype=float)
    return 0.5 * (A - A.T)


def _is_spd_sym(S: Matrix) -> bool:
    if S.shape[0] == 0:
        return True
    if not sp.issparse(S):
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            return False
        return True
    if S.shape[0] <= 500:
        return _is_spd_sym(S.toarray())
    # LDL^T by unpivoted LU under a symmetric ordering: SPD iff every pivot > 0
    try:
        lu = spla.splu(
            sp.csc_matrix(S),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError:
        return False
    if not np.all(lu.perm_r == lu.perm_c):
        return False
    return bool(np.all(lu.U.diagonal() > 0.0))


def is_positive_definite(A: Matrix) -> bool:
    """True when the symmetric part of ``A`` admits a Cholesky factorization."""
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"definiteness needs a square matrix, got {A.shape}")
    return _is_spd_sym(symmetric_part(A))


def is_positive_semidefinite(A: Matrix, rtol: float = 1e-10) -> bool:
    """True when ``lambda_min((A + A^T)/2) >= -rtol * ||A||``.

    Small matrices use a dense symmetric eigensolver; large sparse ones test
    that the shifted symmetric part is positive definite.
    """
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"definiteness needs a square matrix, got {A.shape}")
    if A.shape[0] == 0:
        return True
    S = symmetric_part(A)
    norm = frobenius_norm(A)
    if norm == 0.0:
        return True
    if not sp.issparse(S) or S.shape[0] <= 2000:
        return bool(np.linalg.eigvalsh(to_dense(S))[0] >= -rtol * norm)
    shifted = S + sp.identity(S.shape[0], format="csr") * (rtol * norm)
    return _is_spd_sym(as_csr(shifted))


def frobenius_norm(A: Matrix) -> float:
    if sp.issparse(A):
        return float(np.sqrt(np.sum(np.asarray(A.data, dtype=float) ** 2)))
    return float(np.linalg.norm(np.asarray(A, dtype=float), "fro"))


def trace(A: Matrix) -> float:
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"trace needs a square matrix, got {A.shape}")
    return float(A.diagonal().sum()) if sp.issparse(A) else float(np.trace(A))


def is_diagonal(A: Matrix) -> bool:
    if sp.issparse(A):
        coo = sp.coo_matrix(A)
        return bool(np.all(coo.row[coo.data != 0] == coo.col[coo.data != 0]))
    A = np.asarray(A)
    return bool(np.count_nonzero(A - np.diag(np.diag(A))) == 0)
