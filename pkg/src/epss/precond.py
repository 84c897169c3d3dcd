"""EPSS-family preconditioners.

The preconditioner is ``P = (Sigma + Pc) Sigma^{-1} (Sigma + Sc)`` where
``Pc = [[A_P, B_P^T], [-B_P, C_P]]``, ``Sc = [[A_S, B_S^T], [-B_S, C_S]]`` and
``Sigma = blockdiag(P_alpha, P_beta)``.  Every named preset is a particular
choice of splitting and shifts; SEPSS additionally has a factored
application that only needs one sparse solve with the Schur-like matrix
``N = A + P_alpha + B^T (C_P + P_beta)^{-1} B`` plus triangular solves.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import linalg
from .krylov import SolveReport
from .linalg import SingularMatrixError, as_csr
from .saddle import (
    BlockVector,
    SaddleSystem,
    ShiftPair,
    SplittingSet,
    hermitian_skew_splitting,
    triangular_splitting,
)

log = logging.getLogger(__name__)

PRESETS = ("HSS", "GHSS", "EHSS", "PSS", "GPSS", "EPSS", "SS", "GSS", "ESS", "SEPSS")
SINGLE_PARAMETER = frozenset({"HSS", "PSS", "SS"})
REGULARIZER = 1e-4
SCHUR_BLOCK = 256


class PreconditionerError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class EpssConfig:
    splitting: SplittingSet
    shifts: ShiftPair
    preset: str = "custom"
    alpha: float = 1.0
    beta: float = 1.0
    Q1: Optional[sp.csr_matrix] = None
    Q2: Optional[sp.csr_matrix] = None

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")

    def sigma(self) -> sp.csr_matrix:
        return self.shifts.sigma()

    def p_block(self) -> sp.csr_matrix:
        s = self.splitting
        return as_csr(sp.bmat([[s.A_P, s.B_P.T], [-s.B_P, s.C_P]], format="csr"))

    def s_block(self) -> sp.csr_matrix:
        s = self.splitting
        return as_csr(sp.bmat([[s.A_S, s.B_S.T], [-s.B_S, s.C_S]], format="csr"))


def default_shift_bases(sys: SaddleSystem) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """``Q1 = diag(A + A^T)`` and ``Q2 = 1e-4 I + diag(C + C^T)``."""
    q1 = 2.0 * sys.A.diagonal()
    q2 = REGULARIZER + 2.0 * sys.C.diagonal()
    return as_csr(sp.diags(q1)), as_csr(sp.diags(q2))


def preset_config(preset: str, sys: SaddleSystem, alpha: float, beta: Optional[float] = None) -> EpssConfig:
    """Splitting and shifts of a named preset.

    ``beta`` is ignored by the single-parameter presets (HSS, PSS, SS), which
    use ``P_beta = alpha I``.
    """
    preset = preset.upper()
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    n, m = sys.n, sys.m
    zero_a = sp.csr_matrix((n, n))
    zero_b = sp.csr_matrix((m, n))
    zero_c = sp.csr_matrix((m, m))
    if preset in SINGLE_PARAMETER or beta is None:
        beta = alpha

    if preset in ("HSS", "GHSS", "EHSS"):
        A_P, A_S = hermitian_skew_splitting(sys.A)
    else:
        A_P, A_S = sys.A, zero_a
    if preset == "SEPSS":
        C_P, C_S = triangular_splitting(sys.C)
    else:
        C_P, C_S = sys.C, zero_c
    if preset in ("SS", "GSS", "ESS", "SEPSS"):
        B_P, B_S = sys.B, zero_b
    else:
        B_P, B_S = zero_b, sys.B

    if preset in ("EHSS", "EPSS", "ESS", "SEPSS"):
        Q1, Q2 = default_shift_bases(sys)
    else:
        Q1, Q2 = as_csr(sp.identity(n)), as_csr(sp.identity(m))
    splitting = SplittingSet(A_P, A_S, B_P, B_S, C_P, C_S)
    shifts = ShiftPair(Q1 * alpha, Q2 * beta)
    return EpssConfig(splitting, shifts, preset, alpha, beta, Q1, Q2)


def sepss_config(sys: SaddleSystem, alpha: float, Q1, beta: float, Q2) -> EpssConfig:
    C_P, C_S = triangular_splitting(sys.C)
    n, m = sys.n, sys.m
    splitting = SplittingSet(
        sys.A, sp.csr_matrix((n, n)), sys.B, sp.csr_matrix((m, n)), C_P, C_S
    )
    Q1, Q2 = as_csr(Q1), as_csr(Q2)
    return EpssConfig(splitting, ShiftPair(Q1 * alpha, Q2 * beta), "SEPSS", alpha, beta, Q1, Q2)


class EpssOperator:
    """Factored preconditioner; ``apply`` returns ``y`` with ``P y = x``.

    Built once, read-only afterwards, so one instance can serve several
    concurrent solves.
    """

    def __init__(self, mode: str, n: int, m: int, **parts):
        self.mode = mode
        self.n = n
        self.m = m
        self._parts = parts
        self.build_time = parts.pop("build_time", 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        N = self.n + self.m
        return (N, N)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.mode == "sepss":
            return self._apply_sepss(x)
        p = self._parts
        t = p["lu_p"].solve(x)
        return p["lu_s"].solve(p["sigma"] @ t)

    __call__ = apply

    def apply_block(self, x: BlockVector) -> BlockVector:
        return BlockVector.split(self.apply(x.stack()), self.n)

    def _t_solve(self, r: np.ndarray) -> np.ndarray:
        p = self._parts
        if p["t_lower"]:
            return linalg.triangular_solve(p["T"], r, lower=True)
        return p["lu_t"].solve(r)

    def _apply_sepss(self, x: np.ndarray) -> np.ndarray:
        p = self._parts
        B = p["B"]
        x1, x2 = x[: self.n], x[self.n :]
        s2 = self._t_solve(x2)
        s1 = x1 - B.T @ s2
        y1 = p["lu_n"].solve(s1)
        z2 = self._t_solve(B @ y1 + x2)
        y2 = p["lu_cs"].solve(p["P_beta"] @ z2)
        return np.concatenate([y1, y2])


def _factor(M, what: str) -> linalg.LUFactors:
    try:
        return linalg.lu_factor(M)
    except SingularMatrixError as exc:
        raise PreconditionerError(f"cannot factor {what}: {exc}") from exc


def build_generic(sys: SaddleSystem, cfg: EpssConfig) -> EpssOperator:
    start = time.perf_counter()
    sigma = cfg.sigma()
    lu_p = _factor(as_csr(sigma + cfg.p_block()), "Sigma + P")
    lu_s = _factor(as_csr(sigma + cfg.s_block()), "Sigma + S")
    return EpssOperator(
        "generic", sys.n, sys.m, lu_p=lu_p, lu_s=lu_s, sigma=sigma,
        build_time=time.perf_counter() - start,
    )


def _schur_coupling(T: sp.csr_matrix, B: sp.csr_matrix, lower: bool, lu_t) -> sp.csr_matrix:
    """``T^{-1} B`` assembled in column blocks of triangular solves."""
    m, n = B.shape
    Bc = B.tocsc()
    pieces = []
    for start in range(0, n, SCHUR_BLOCK):
        block = Bc[:, start : start + SCHUR_BLOCK].toarray()
        if not block.any():
            pieces.append(sp.csc_matrix(block.shape))
            continue
        sol = linalg.triangular_solve(T, block, lower=True) if lower else lu_t.solve(block)
        pieces.append(sp.csc_matrix(sol))
    return as_csr(sp.hstack(pieces, format="csr")) if pieces else sp.csr_matrix((m, n))


def build_sepss(sys: SaddleSystem, alpha: float, Q1, beta: float, Q2) -> EpssOperator:
    """SEPSS operator from its factored form.

    A diagonal ``P_beta`` makes ``C_P + P_beta`` lower triangular so that the
    two solves with it are forward substitutions; otherwise it is LU-factored.
    """
    return build_sepss_from_config(sys, sepss_config(sys, alpha, Q1, beta, Q2))


def build_sepss_from_config(sys: SaddleSystem, cfg: EpssConfig) -> EpssOperator:
    start = time.perf_counter()
    s = cfg.splitting
    if s.A_S.nnz or s.B_S.nnz:
        raise ValueError("SEPSS needs A_S = 0 and B_S = 0")
    P_alpha, P_beta = cfg.shifts.P_alpha, cfg.shifts.P_beta
    T = as_csr(s.C_P + P_beta)
    lower = sp.triu(T, k=1).nnz == 0
    lu_t = None
    if not lower:
        lu_t = _factor(T, "C_P + P_beta")
    elif np.any(T.diagonal() == 0.0):
        raise PreconditionerError("cannot factor C_P + P_beta: zero diagonal entry")
    W = _schur_coupling(T, sys.B, lower, lu_t)
    N = as_csr(sys.A + P_alpha + sys.B.T @ W)
    lu_n = _factor(N, "N = A + P_alpha + B^T (C_P + P_beta)^{-1} B")
    lu_cs = _factor(as_csr(s.C_S + P_beta), "C_S + P_beta")
    return EpssOperator(
        "sepss", sys.n, sys.m, T=T, t_lower=lower, lu_t=lu_t, lu_n=lu_n, lu_cs=lu_cs,
        B=sys.B, P_beta=P_beta, N=N, build_time=time.perf_counter() - start,
    )


def build_operator(sys: SaddleSystem, cfg: EpssConfig, mode: Optional[str] = None) -> EpssOperator:
    """Factored SEPSS path for the SEPSS preset, generic path otherwise (or when forced)."""
    mode = mode or ("sepss" if cfg.preset == "SEPSS" else "generic")
    if mode == "sepss":
        return build_sepss_from_config(sys, cfg)
    return build_generic(sys, cfg)


# dense references -----------------------------------------------------------

def dense_blocks(cfg: EpssConfig) -> dict[str, np.ndarray]:
    s, sh = cfg.splitting, cfg.shifts
    return {
        "A_P": s.A_P.toarray(), "A_S": s.A_S.toarray(),
        "B_P": s.B_P.toarray(), "B_S": s.B_S.toarray(),
        "C_P": s.C_P.toarray(), "C_S": s.C_S.toarray(),
        "Pa": sh.P_alpha.toarray(), "Pb": sh.P_beta.toarray(),
    }


def dense_factored(cfg: EpssConfig) -> np.ndarray:
    """``(Sigma + Pc) Sigma^{-1} (Sigma + Sc)`` as a dense matrix."""
    sigma = cfg.sigma().toarray()
    left = sigma + cfg.p_block().toarray()
    right = sigma + cfg.s_block().toarray()
    return left @ np.linalg.solve(sigma, right)


def dense_expanded(sys: SaddleSystem, cfg: EpssConfig) -> np.ndarray:
    """The same preconditioner written out block by block."""
    d = dense_blocks(cfg)
    A, C = sys.A.toarray(), sys.C.toarray()
    Pa, Pb = d["Pa"], d["Pb"]
    Pai, Pbi = np.linalg.inv(Pa), np.linalg.inv(Pb)
    A_P, A_S, B_P, B_S, C_P, C_S = (d[k] for k in ("A_P", "A_S", "B_P", "B_S", "C_P", "C_S"))
    top_left = Pa + A + A_P @ Pai @ A_S - B_P.T @ Pbi @ B_S
    top_right = (Pa + A_P) @ Pai @ B_S.T + B_P.T @ Pbi @ (Pb + C_S)
    bottom_left = -B_P @ Pai @ (Pa + A_S) - (Pb + C_P) @ Pbi @ B_S
    bottom_right = Pb + C + C_P @ Pbi @ C_S - B_P @ Pai @ B_S.T
    return np.block([[top_left, top_right], [bottom_left, bottom_right]])


def dense_sepss(sys: SaddleSystem, cfg: EpssConfig) -> np.ndarray:
    """SEPSS preconditioner as the product of its two block factors."""
    d = dense_blocks(cfg)
    A, B = sys.A.toarray(), sys.B.toarray()
    Pa, Pb = d["Pa"], d["Pb"]
    n, m = sys.n, sys.m
    first = np.block([[A + Pa, B.T], [-B, d["C_P"] + Pb]])
    second = np.block([
        [np.eye(n), np.zeros((n, m))],
        [np.zeros((m, n)), np.linalg.solve(Pb, d["C_S"] + Pb)],
    ])
    return first @ second


# shift parameter heuristics ---------------------------------------------------

def _c_parts(sys: SaddleSystem, C_P=None, C_S=None):
    if C_P is None or C_S is None:
        return triangular_splitting(sys.C)
    return as_csr(C_P), as_csr(C_S)


def _q2_solve(Q2: sp.csr_matrix):
    if linalg.is_diagonal(Q2):
        inv = 1.0 / Q2.diagonal()
        return lambda M: as_csr(sp.diags(inv) @ M)
    lu = linalg.lu_factor(Q2)
    return lambda M: as_csr(lu.solve(M.toarray()))


def beta_star(sys: SaddleSystem, alpha: float, Q1, Q2, C_P=None, C_S=None) -> float:
    """``sqrt(||(B A_a^{-1} B^T + C_P) Q2^{-1} C_S||_F / ||Q2||_F)`` with ``A_a = A + alpha Q1``.

    Returns 0 (and logs) when ``C_S = 0``.  ``C_P``/``C_S`` default to the
    triangular splitting of ``C``.
    """
    C_P, C_S = _c_parts(sys, C_P, C_S)
    if C_S.nnz == 0:
        log.warning("C_S = 0: beta_star is degenerate")
        return 0.0
    Q2 = as_csr(Q2)
    Y = _q2_solve(Q2)(C_S)
    lu = linalg.lu_factor(as_csr(sys.A + as_csr(Q1) * alpha))
    BtY = (sys.B.T @ Y).tocsc()
    CpY = (C_P @ Y).tocsc()
    total = 0.0
    for start in range(0, sys.m, SCHUR_BLOCK):
        cols = slice(start, start + SCHUR_BLOCK)
        rhs = BtY[:, cols].toarray()
        block = CpY[:, cols].toarray()
        if rhs.any():
            block = block + sys.B @ lu.solve(rhs)
        total += float(np.sum(block * block))
    return float(np.sqrt(np.sqrt(total) / linalg.frobenius_norm(Q2)))


def beta_double_star_radicand(sys: SaddleSystem, Q2, C_P=None, C_S=None) -> float:
    C_P, C_S = _c_parts(sys, C_P, C_S)
    Q2 = as_csr(Q2)
    solve = _q2_solve(Q2)
    left = as_csr(sys.B @ sys.B.T + C_P.T @ C_P)
    half = solve(as_csr(C_S @ C_S))  # Q2^{-1} C_S^2
    right = as_csr(solve(as_csr(half.T)).T)  # (Q2^{-1} (Q2^{-1} C_S^2)^T)^T = Q2^{-1} C_S^2 Q2^{-1}
    # trace(X Y) = sum(X .* Y^T)
    tr = float(left.multiply(right.T).sum())
    return -tr / float(Q2.multiply(Q2.T).sum())


def beta_double_star(sys: SaddleSystem, Q2, C_P=None, C_S=None) -> float:
    """``(-trace((B B^T + C_P^T C_P) Q2^{-1} C_S^2 Q2^{-1}) / trace(Q2^2))^(1/4)``."""
    C_P, C_S = _c_parts(sys, C_P, C_S)
    if C_S.nnz == 0:
        log.warning("C_S = 0: beta_double_star is degenerate")
        return 0.0
    radicand = beta_double_star_radicand(sys, Q2, C_P, C_S)
    return float(max(radicand, 0.0) ** 0.25)


# stationary iteration ----------------------------------------------------------

def iteration_operator(sys: SaddleSystem, op: EpssOperator):
    """Matrix-free ``v -> v - 2 P^{-1} A v``."""
    return lambda v: v - 2.0 * op.apply(sys.matvec(v))


def stationary_solve(
    sys: SaddleSystem,
    op: EpssOperator,
    b: np.ndarray,
    u0: Optional[np.ndarray] = None,
    tol: float = 1e-9,
    max_iters: int = 1000,
) -> tuple[np.ndarray, SolveReport]:
    """Two-half-step EPSS iteration written as ``u <- u + 2 P^{-1} (b - A u)``.

    ``residual_history`` holds ``||b - A u_k|| / ||b||`` for k = 0, 1, ...;
    hitting ``max_iters`` gives a non-converged report, not an exception.
    ``tol = 0`` runs the full ``max_iters`` steps.
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    u = np.zeros_like(b) if u0 is None else np.array(u0, dtype=float)
    bnorm = np.linalg.norm(b)
    scale = bnorm if bnorm > 0 else 1.0
    report = SolveReport()
    r = b - sys.matvec(u)
    rel = np.linalg.norm(r) / scale
    report.residual_history.append(rel)
    k = 0
    while not (rel <= tol) and k < max_iters:
        u = u + 2.0 * op.apply(r)
        r = b - sys.matvec(u)
        rel = np.linalg.norm(r) / scale
        report.residual_history.append(rel)
        k += 1
        if not np.isfinite(rel):
            report.stop_reason = "breakdown"
            break
    report.iterations = k
    report.final_residual = float(rel)
    report.converged = bool(rel <= tol)
    if report.converged:
        report.stop_reason = "tol"
    elif report.stop_reason != "breakdown":
        report.stop_reason = "max-iters"
    report.wall_time = time.perf_counter() - start
    return u, report
