"""Restarted GMRES and flexible GMRES with right preconditioning.

Convergence is always judged on the true residual ``||b - A u|| / ||b||``,
recomputed at every restart and at exit; the Givens-rotated least-squares
residual only decides when to leave an Arnoldi cycle early.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

LinearMap = Callable[[np.ndarray], np.ndarray]
FlexibleMap = Callable[[np.ndarray, int], np.ndarray]

BREAKDOWN_TOL = 1e-14
REORTH_RATIO = 0.7


@dataclass(frozen=True)
class SolveOptions:
    restart: int = 20
    rel_tol: float = 1e-9
    max_iters: int = 1000
    max_time: float = 1000.0

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError(f"restart must be >= 1, got {self.restart}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    final_residual: float = float("nan")
    error: Optional[float] = None
    wall_time: float = 0.0
    converged: bool = False
    stop_reason: str = "max-iters"

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "error": self.error,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "stop_reason": self.stop_reason,
        }


def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def _solve(
    apply_a: LinearMap,
    precond: Optional[FlexibleMap],
    b: np.ndarray,
    u0: Optional[np.ndarray],
    opts: SolveOptions,
    flexible: bool,
    exact: Optional[np.ndarray],
) -> tuple[np.ndarray, SolveReport]:
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    N = b.shape[0]
    u = np.zeros(N) if u0 is None else np.array(u0, dtype=float)
    report = SolveReport()
    bnorm = np.linalg.norm(b)
    scale = bnorm if bnorm > 0 else 1.0

    def finish(reason: str, converged: bool, rel: float) -> tuple[np.ndarray, SolveReport]:
        report.final_residual = rel
        report.converged = converged
        report.stop_reason = reason
        if exact is not None:
            report.error = float(np.linalg.norm(exact - u) / np.linalg.norm(exact))
        report.wall_time = time.perf_counter() - start
        return u, report

    r = b - apply_a(u)
    beta = np.linalg.norm(r)
    rel = beta / scale
    if not np.isfinite(rel):
        return finish("breakdown", False, rel)
    if rel <= opts.rel_tol:
        return finish("tol", True, rel)

    k = opts.restart
    step = 0
    while True:
        V = np.zeros((k + 1, N))
        Z = np.zeros((k, N)) if flexible else None
        H = np.zeros((k + 1, k))
        cs = np.zeros(k)
        sn = np.zeros(k)
        g = np.zeros(k + 1)
        g[0] = beta
        V[0] = r / beta
        cycle_start = rel
        j_used = 0
        broke = False
        for j in range(k):
            z = V[j] if precond is None else precond(V[j], step)
            if flexible:
                Z[j] = z
            w = np.array(apply_a(z), dtype=float)  # own copy: orthogonalized in place
            wnorm = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            hnext = np.linalg.norm(w)
            if hnext < REORTH_RATIO * wnorm:
                for i in range(j + 1):
                    c = V[i] @ w
                    H[i, j] += c
                    w -= c * V[i]
                hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            step += 1
            j_used = j + 1
            if not (np.all(np.isfinite(H[: j + 2, j])) and np.isfinite(hnext)):
                return finish("breakdown", False, rel)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            report.residual_history.append(abs(g[j + 1]) / scale)
            if hnext <= BREAKDOWN_TOL * wnorm:
                broke = True
                break
            V[j + 1] = w / hnext
            if abs(g[j + 1]) / scale <= opts.rel_tol or step >= opts.max_iters:
                break
            if time.perf_counter() - start > opts.max_time:
                break
        y = np.zeros(j_used)
        for i in range(j_used - 1, -1, -1):
            if H[i, i] == 0.0:
                y[i] = 0.0
                continue
            y[i] = (g[i] - H[i, i + 1 : j_used] @ y[i + 1 :]) / H[i, i]
        if flexible:
            u = u + y @ Z[:j_used]
        else:
            d = y @ V[:j_used]
            u = u + (d if precond is None else precond(d, step))
        r = b - apply_a(u)
        beta = np.linalg.norm(r)
        rel = beta / scale
        if not np.isfinite(rel):
            return finish("breakdown", False, rel)
        if rel <= opts.rel_tol:
            return finish("tol", True, rel)
        if broke and rel >= cycle_start:
            return finish("breakdown", False, rel)
        if step >= opts.max_iters:
            return finish("max-iters", False, rel)
        if time.perf_counter() - start > opts.max_time:
            return finish("max-time", False, rel)


def _wrap(precond: Optional[LinearMap]) -> Optional[FlexibleMap]:
    if precond is None:
        return None
    return lambda v, _step: precond(v)


def gmres(
    apply_a: LinearMap,
    b: np.ndarray,
    precond: Optional[LinearMap] = None,
    u0: Optional[np.ndarray] = None,
    opts: SolveOptions = SolveOptions(),
    exact: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, SolveReport]:
    """Right-preconditioned restarted GMRES.

    ``precond`` maps ``v`` to an approximation of ``P^{-1} v``.  The report's
    ``iterations`` counts inner Arnoldi steps over all cycles.
    """
    u, report = _solve(apply_a, _wrap(precond), b, u0, opts, False, exact)
    report.iterations = len(report.residual_history)
    return u, report


def fgmres(
    apply_a: LinearMap,
    b: np.ndarray,
    precond: Optional[FlexibleMap] = None,
    u0: Optional[np.ndarray] = None,
    opts: SolveOptions = SolveOptions(),
    exact: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, SolveReport]:
    """Flexible GMRES; ``precond(v, step)`` may change with the global inner step index."""
    u, report = _solve(apply_a, precond, b, u0, opts, True, exact)
    report.iterations = len(report.residual_history)
    return u, report


def relative_residual(apply_a: LinearMap, u: np.ndarray, b: np.ndarray) -> float:
    bnorm = np.linalg.norm(b)
    r = np.linalg.norm(b - apply_a(u))
    return float(r / bnorm) if bnorm > 0 else float(r)


def singular_solve_check(sys, u: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """Residual-based solution test; the only meaningful one when the system is singular."""
    return relative_residual(sys.matvec, u, b) <= tol
