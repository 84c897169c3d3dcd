"""Dense semi-convergence certification of EPSS iterations on small systems.

An iteration ``u <- Gamma u + c`` on a singular system is semi-convergent iff
the eigenvalue 1 of ``Gamma`` is semisimple (``rank (I-Gamma)^2 = rank (I-Gamma)``)
and every other eigenvalue lies strictly inside the unit disc.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import linalg
from .precond import EpssConfig, dense_blocks
from .saddle import SaddleSystem, assemble_full

UNIT_TOL = 1e-8
RANK_TOL = 1e-8
CROSS_CHECK_TOL = 1e-10


class InconsistentSplittingError(RuntimeError):
    pass


@dataclass
class SpectralReport:
    spectrum: np.ndarray
    rho: float
    nu: float
    has_unit_eigenvalue: bool
    unit_multiplicity: int
    rank_i_minus_gamma: int
    rank_i_minus_gamma_sq: int
    index_one: bool
    semi_convergent: bool

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "nu": self.nu,
            "has_unit_eigenvalue": self.has_unit_eigenvalue,
            "unit_multiplicity": self.unit_multiplicity,
            "rank_i_minus_gamma": self.rank_i_minus_gamma,
            "rank_i_minus_gamma_sq": self.rank_i_minus_gamma_sq,
            "index_one": self.index_one,
            "semi_convergent": self.semi_convergent,
        }


@dataclass
class CorollaryReport:
    null_basis: np.ndarray
    null_in_null_c: bool
    condition_1: bool
    condition_2: bool
    condition_3: bool
    condition_4: bool
    shift_forms: list[float] = field(default_factory=list)
    coupling_forms: list[float] = field(default_factory=list)

    @property
    def any_condition(self) -> bool:
        return self.null_in_null_c and (
            self.condition_1 or self.condition_2 or self.condition_3 or self.condition_4
        )

    def as_dict(self) -> dict:
        return {
            "dim_null_sym_c": int(self.null_basis.shape[1]),
            "null_in_null_c": self.null_in_null_c,
            "condition_1": self.condition_1,
            "condition_2": self.condition_2,
            "condition_3": self.condition_3,
            "condition_4": self.condition_4,
            "sufficient": self.any_condition,
            "shift_forms": self.shift_forms,
            "coupling_forms": self.coupling_forms,
        }


def _guard(sys: SaddleSystem) -> None:
    if sys.size > linalg.MAX_DENSE_EIG:
        raise linalg.DimensionError(
            f"n + m = {sys.size} exceeds the dense certification limit {linalg.MAX_DENSE_EIG}"
        )


def iteration_matrix_dense(sys: SaddleSystem, cfg: EpssConfig) -> np.ndarray:
    """``(Sigma+S)^{-1} (Sigma-P) (Sigma+P)^{-1} (Sigma-S)``, checked against ``M^{-1} N``."""
    _guard(sys)
    sigma = cfg.sigma().toarray()
    P = cfg.p_block().toarray()
    S = cfg.s_block().toarray()
    lu_sp = sla.lu_factor(sigma + S)
    lu_pp = sla.lu_factor(sigma + P)
    gamma = sla.lu_solve(lu_sp, (sigma - P) @ sla.lu_solve(lu_pp, sigma - S))

    M = 0.5 * (sigma + P) @ np.linalg.solve(sigma, sigma + S)
    N = 0.5 * (sigma - P) @ np.linalg.solve(sigma, sigma - S)
    other = np.linalg.solve(M, N)
    gap = np.max(np.abs(gamma - other)) / max(1.0, np.max(np.abs(gamma)))
    if gap > CROSS_CHECK_TOL:
        raise InconsistentSplittingError(f"Gamma and M^-1 N differ by {gap:.2e}")
    return gamma


def certify_matrix(gamma: np.ndarray, unit_tol: float = UNIT_TOL, rank_tol: float = RANK_TOL) -> SpectralReport:
    gamma = np.asarray(gamma, dtype=float)
    lam = linalg.dense_eigenvalues(gamma)
    unit = np.abs(lam - 1.0) <= unit_tol
    rest = np.abs(lam[~unit])
    rho = float(np.max(np.abs(lam))) if lam.size else 0.0
    nu = float(np.max(rest)) if rest.size else 0.0
    E = np.eye(gamma.shape[0]) - gamma
    r1 = linalg.rank_with_tol(E, rank_tol)
    r2 = linalg.rank_with_tol(E @ E, rank_tol)
    index_one = r1 == r2
    return SpectralReport(
        spectrum=lam,
        rho=rho,
        nu=nu,
        has_unit_eigenvalue=bool(unit.any()),
        unit_multiplicity=int(unit.sum()),
        rank_i_minus_gamma=r1,
        rank_i_minus_gamma_sq=r2,
        index_one=index_one,
        semi_convergent=bool(nu < 1.0 and index_one),
    )


def certify(sys: SaddleSystem, cfg: EpssConfig, unit_tol: float = UNIT_TOL, rank_tol: float = RANK_TOL) -> SpectralReport:
    return certify_matrix(iteration_matrix_dense(sys, cfg), unit_tol, rank_tol)


def unit_eigenvectors(gamma: np.ndarray, unit_tol: float = UNIT_TOL) -> np.ndarray:
    """Eigenvectors (columns) of ``gamma`` whose eigenvalue is within ``unit_tol`` of 1."""
    lam, vecs = sla.eig(gamma)
    keep = np.abs(lam - 1.0) <= unit_tol
    return vecs[:, keep]


def corollary_check(sys: SaddleSystem, cfg: EpssConfig, tol: float = 1e-10) -> CorollaryReport:
    """Evaluate the lambda-free sufficient conditions for semi-convergence."""
    _guard(sys)
    d = dense_blocks(cfg)
    C = sys.C.toarray()
    Pai, Pbi = np.linalg.inv(d["Pa"]), np.linalg.inv(d["Pb"])
    Z = linalg.null_space(C + C.T, tol) if np.any(C) else np.eye(sys.m)
    scale_c = max(np.abs(C).max() if C.size else 0.0, 1.0)
    in_null_c = bool(np.all(np.linalg.norm(C @ Z, axis=0) <= tol * scale_c)) if Z.size else True

    shift_mat = d["Pb"] + d["C_S"] @ Pbi @ d["C_S"].T
    coupling = d["B_S"] @ Pai @ d["B_P"].T
    shift_forms = [float(r @ shift_mat @ r) for r in Z.T]
    coupling_forms = [float(r @ coupling @ r) for r in Z.T]
    gaps = [
        abs(s - c) > tol * max(abs(s), abs(c), 1.0) for s, c in zip(shift_forms, coupling_forms)
    ]
    cond1 = all(gaps)
    cond2 = all(c <= 1e-12 for c in coupling_forms)

    def annihilates(M: np.ndarray, r: np.ndarray) -> bool:
        return np.linalg.norm(M.T @ r) <= tol * max(np.abs(M).max() if M.size else 0.0, 1.0)

    cond3 = all(annihilates(d["B_S"], r) or annihilates(d["B_P"], r) for r in Z.T)
    c_pd = linalg.is_positive_definite(C) if sys.m else True
    cond4 = bool(c_pd or not np.any(d["B_S"]) or not np.any(d["B_P"]))
    return CorollaryReport(Z, in_null_c, cond1, cond2, cond3, cond4, shift_forms, coupling_forms)


def theorem_condition_check(
    sys: SaddleSystem,
    cfg: EpssConfig,
    spectral: SpectralReport,
    unit_tol: float = UNIT_TOL,
    rtol: float = 1e-8,
    tol: float = 1e-10,
) -> list[tuple[complex, int, bool]]:
    """For every unit-modulus eigenvalue other than 1, test each null vector of ``C + C^T``.

    Returns ``(lambda, basis index, violated)`` triples, where ``violated``
    means the two sides of the theorem's inequality coincide to ``rtol``.
    The check runs a posteriori on the computed spectrum.
    """
    d = dense_blocks(cfg)
    C = sys.C.toarray()
    Z = linalg.null_space(C + C.T, tol) if np.any(C) else np.eye(sys.m)
    if Z.size == 0:
        return []
    Pai, Pbi = np.linalg.inv(d["Pa"]), np.linalg.inv(d["Pb"])
    form = d["Pb"] - d["B_S"] @ Pai @ d["B_P"].T + d["C_S"] @ Pbi @ d["C_P"]
    out = []
    for lam in spectral.spectrum:
        if abs(lam - 1.0) <= unit_tol or abs(abs(lam) - 1.0) > unit_tol:
            continue
        ratio = (1.0 + lam) / (1.0 - lam)
        for i, r in enumerate(Z.T):
            left = complex(r @ form @ r)
            right = ratio * complex(r @ C @ r)
            violated = abs(left - right) <= rtol * max(abs(left), abs(right), 1e-300)
            out.append((complex(lam), i, bool(violated)))
    return out


def asymptotic_ratio(history: list[float], window: int = 50, floor: float = 1e-11) -> float:
    """Geometric-mean contraction of a residual sequence over its last ``window`` steps.

    Steps after the sequence first falls below ``floor`` are dropped so that
    rounding noise at machine precision does not masquerade as stagnation.
    """
    h = np.asarray(history, dtype=float)
    below = np.flatnonzero(h < floor)
    if below.size:
        h = h[: below[0] + 1]
    if h.size < 2:
        return 0.0
    k = min(window, h.size - 1)
    first, last = h[-k - 1], h[-1]
    if first == 0.0:
        return 0.0
    return float((last / first) ** (1.0 / k))


def null_residuals(sys: SaddleSystem, vectors: np.ndarray) -> np.ndarray:
    """``||calA v|| / ||v||`` for each column."""
    full = assemble_full(sys).toarray()
    if vectors.size == 0:
        return np.zeros(0)
    return np.linalg.norm(full @ vectors, axis=0) / np.linalg.norm(vectors, axis=0)
