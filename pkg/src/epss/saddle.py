"""Generalized saddle point systems ``[[A, B^T], [-B, C]] u = b`` and their splittings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from . import linalg
from .linalg import DimensionError, as_csr

DENSE_LIMIT = 2000


class BlockVector(NamedTuple):
    x: np.ndarray
    y: np.ndarray

    def stack(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @classmethod
    def split(cls, u: np.ndarray, n: int) -> "BlockVector":
        u = np.asarray(u, dtype=float)
        return cls(u[:n], u[n:])


@dataclass(frozen=True)
class SaddleSystem:
    """The three blocks ``A`` (n x n), ``B`` (m x n) and ``C`` (m x m).

    ``B`` is stored with its natural sign; the ``-B`` of the (2,1) block is
    applied by :func:`assemble_full` and :func:`apply_blocks`.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix

    def __post_init__(self):
        A, B, C = as_csr(self.A), as_csr(self.B), as_csr(self.C)
        n, m = A.shape[0], C.shape[0]
        if A.shape != (n, n) or C.shape != (m, m) or B.shape != (m, n):
            raise DimensionError(f"inconsistent blocks: A {A.shape}, B {B.shape}, C {C.shape}")
        if m > n:
            raise DimensionError(f"need m <= n, got m={m}, n={n}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def size(self) -> int:
        return self.n + self.m

    def matvec(self, u: np.ndarray) -> np.ndarray:
        return apply_blocks(self, BlockVector.split(u, self.n)).stack()


def assemble_full(sys: SaddleSystem) -> sp.csr_matrix:
    return as_csr(sp.bmat([[sys.A, sys.B.T], [-sys.B, sys.C]], format="csr"))


def apply_blocks(sys: SaddleSystem, u: BlockVector) -> BlockVector:
    x, y = np.asarray(u.x, dtype=float), np.asarray(u.y, dtype=float)
    if x.shape != (sys.n,) or y.shape != (sys.m,):
        raise DimensionError(f"block vector ({x.shape}, {y.shape}) does not fit n={sys.n}, m={sys.m}")
    return BlockVector(sys.A @ x + sys.B.T @ y, sys.C @ y - sys.B @ x)


@dataclass(frozen=True)
class Diagnostics:
    m: int
    a_positive_definite: bool
    c_positive_semidefinite: bool
    rank_b: Optional[int] = None
    dim_null_sym_c: Optional[int] = None
    null_sym_c_in_null_c: Optional[bool] = None
    dim_null_intersection: Optional[int] = None
    dense_checked: bool = False

    @property
    def b_rank_deficient(self) -> Optional[bool]:
        return None if self.rank_b is None else self.rank_b < self.m

    @property
    def singular(self) -> Optional[bool]:
        # A PD => null(calA) = {0} x (null(B^T) ∩ null(C))
        if self.dim_null_intersection is None:
            return None
        return self.dim_null_intersection > 0

    def as_dict(self) -> dict:
        return {
            "a_positive_definite": self.a_positive_definite,
            "c_positive_semidefinite": self.c_positive_semidefinite,
            "rank_b": self.rank_b,
            "b_rank_deficient": self.b_rank_deficient,
            "dim_null_sym_c": self.dim_null_sym_c,
            "null_sym_c_in_null_c": self.null_sym_c_in_null_c,
            "dim_null_intersection": self.dim_null_intersection,
            "singular": self.singular,
        }


def validate(sys: SaddleSystem, tol: float = 1e-10) -> Diagnostics:
    """Structural diagnostics; never raises.

    Rank and null-space quantities need dense SVDs and are only filled in when
    ``n + m <= 2000``.
    """
    try:
        a_pd = linalg.is_positive_definite(sys.A)
    except Exception:
        a_pd = False
    try:
        c_psd = linalg.is_positive_semidefinite(sys.C)
    except Exception:
        c_psd = False
    if sys.size > DENSE_LIMIT:
        return Diagnostics(sys.m, a_pd, c_psd)
    B = sys.B.toarray()
    C = sys.C.toarray()
    rank_b = linalg.rank_with_tol(B, tol) if B.size and np.any(B) else 0
    Z = linalg.null_space(C + C.T, tol) if np.any(C) else np.eye(sys.m)
    scale = max(np.abs(C).max() if C.size else 0.0, 1.0)
    inside = bool(np.all(np.linalg.norm(C @ Z, axis=0) <= tol * scale)) if Z.size else True
    stacked = np.vstack([B.T, C])
    if not np.any(stacked):
        dim_int = sys.m
    else:
        dim_int = linalg.null_space(stacked, tol).shape[1]
    return Diagnostics(sys.m, a_pd, c_psd, rank_b, Z.shape[1], inside, dim_int, dense_checked=True)


@dataclass(frozen=True)
class SplittingSet:
    A_P: sp.csr_matrix
    A_S: sp.csr_matrix
    B_P: sp.csr_matrix
    B_S: sp.csr_matrix
    C_P: sp.csr_matrix
    C_S: sp.csr_matrix

    def __post_init__(self):
        for name in ("A_P", "A_S", "B_P", "B_S", "C_P", "C_S"):
            object.__setattr__(self, name, as_csr(getattr(self, name)))

    def check(self, sys: SaddleSystem, rtol: float = 1e-14, definiteness: bool = True) -> list[str]:
        """Return the list of violated invariants (empty when the splitting is valid)."""
        problems = []
        for label, whole, p, s in (
            ("A", sys.A, self.A_P, self.A_S),
            ("B", sys.B, self.B_P, self.B_S),
            ("C", sys.C, self.C_P, self.C_S),
        ):
            scale = max(linalg._max_abs(whole), 1.0)
            diff = p + s - whole
            if diff.nnz and abs(diff).max() > rtol * scale:
                problems.append(f"{label}_P + {label}_S != {label}")
        for label, S in (("A_S", self.A_S), ("C_S", self.C_S)):
            if (S + S.T).count_nonzero():
                problems.append(f"{label} is not skew-symmetric")
        if definiteness:
            if not linalg.is_positive_definite(self.A_P):
                problems.append("A_P is not positive definite")
            if not linalg.is_positive_semidefinite(self.C_P):
                problems.append("C_P is not positive semidefinite")
        return problems


@dataclass(frozen=True)
class ShiftPair:
    P_alpha: sp.csr_matrix
    P_beta: sp.csr_matrix

    def __post_init__(self):
        object.__setattr__(self, "P_alpha", as_csr(self.P_alpha))
        object.__setattr__(self, "P_beta", as_csr(self.P_beta))

    def check(self) -> list[str]:
        problems = []
        for label, P in (("P_alpha", self.P_alpha), ("P_beta", self.P_beta)):
            if (P - P.T).count_nonzero():
                problems.append(f"{label} is not symmetric")
            elif not linalg.is_positive_definite(P):
                problems.append(f"{label} is not positive definite")
        return problems

    def sigma(self) -> sp.csr_matrix:
        return as_csr(sp.block_diag([self.P_alpha, self.P_beta], format="csr"))


def triangular_splitting(C: sp.spmatrix) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Pointwise ``C_P = D + L + U^T`` (lower triangular) and ``C_S = U - U^T``."""
    C = as_csr(C)
    D = sp.diags(C.diagonal())
    L = sp.tril(C, k=-1)
    U = sp.triu(C, k=1)
    return as_csr(D + L + U.T), as_csr(U - U.T)


def hermitian_skew_splitting(A: sp.spmatrix) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    A = as_csr(A)
    return as_csr((A + A.T) * 0.5), as_csr((A - A.T) * 0.5)
