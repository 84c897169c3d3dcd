"""Parameter sweeps and single runs reproducing the GMRES experiment protocol.

CPU time of a cell covers preconditioner construction plus the Krylov solve;
problem generation is excluded.  Both sub-timings are kept in the row.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from . import krylov, precond
from .krylov import SolveOptions
from .problems import ProblemSpec, generate, rhs_from_ones
from .saddle import SaddleSystem, validate

log = logging.getLogger(__name__)

WORKERS_ENV = "EPSS_WORKERS"
SEPSS_ALPHA = 1e-4
# pseudo-presets understood by the harness on top of the EPSS family
EXTRA_PRESETS = ("NONE", "SEPSS*", "SEPSS**")


def parse_range(text: str) -> list[float]:
    """``"a:s:b"`` (inclusive, MATLAB style), ``"a,b,c"`` or a single number."""
    text = str(text).strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3:
            raise ValueError(f"range needs start:step:stop, got {text!r}")
        lo, step, hi = parts
        if not step > 0:
            raise ValueError(f"range step must be positive, got {step}")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        if count < 1:
            raise ValueError(f"empty range {text!r}")
        return [round(lo + k * step, 12) for k in range(count)]
    values = [float(p) for p in text.split(",") if p.strip()]
    if not values:
        raise ValueError("empty parameter list")
    return values


def default_range() -> list[float]:
    return parse_range("-4:0.25:4")


@dataclass
class SweepSpec:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    presets: Sequence[str] = ("SEPSS",)
    t_alpha: Sequence[float] = field(default_factory=default_range)
    t_beta: Sequence[float] = field(default_factory=default_range)
    options: SolveOptions = field(default_factory=SolveOptions)
    solver: str = "gmres"

    def __post_init__(self):
        if not self.t_alpha or not self.t_beta:
            raise ValueError("parameter ranges must be nonempty")
        for p in self.presets:
            if p.upper() not in precond.PRESETS + EXTRA_PRESETS:
                raise ValueError(f"unknown preset {p!r}")


@dataclass
class ResultRow:
    preset: str
    t_alpha: Optional[float]
    t_beta: Optional[float]
    alpha: Optional[float]
    beta: Optional[float]
    iterations: int
    cpu: float
    build_time: float
    solve_time: float
    residual: float
    error: Optional[float]
    converged: bool
    stop_reason: str
    message: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def _single_parameter(preset: str) -> bool:
    return preset in precond.SINGLE_PARAMETER or preset in ("NONE", "SEPSS*", "SEPSS**")


def known_nonsingular(sys: SaddleSystem, spec: Optional[ProblemSpec]) -> Optional[bool]:
    if spec is not None and spec.kind == "oseen-fd":
        return False
    if spec is not None and spec.kind == "synthetic-singular":
        rank_b = spec.m - 1 if spec.rank_b is None else spec.rank_b
        return min(spec.m - rank_b, spec.null_c) == 0
    diag = validate(sys)
    return None if diag.singular is None else not diag.singular


def sepss_star_beta(sys: SaddleSystem, which: str) -> float:
    Q1, Q2 = precond.default_shift_bases(sys)
    if which == "SEPSS*":
        return precond.beta_star(sys, SEPSS_ALPHA, Q1, Q2)
    return precond.beta_double_star(sys, Q2)


def run_cell(
    sys: SaddleSystem,
    preset: str,
    alpha: Optional[float],
    beta: Optional[float],
    b: np.ndarray,
    options: SolveOptions = SolveOptions(),
    exact: Optional[np.ndarray] = None,
    solver: str = "gmres",
) -> ResultRow:
    """One preconditioned solve from a zero initial guess; failures become rows."""
    preset = preset.upper()
    t_alpha = None if alpha is None else math.log10(alpha)
    t_beta = None if beta is None else math.log10(beta)
    start = time.perf_counter()
    try:
        if preset in ("SEPSS*", "SEPSS**"):
            alpha = SEPSS_ALPHA
            beta = sepss_star_beta(sys, preset)
            t_alpha, t_beta = math.log10(alpha), (math.log10(beta) if beta > 0 else None)
            cfg = precond.preset_config("SEPSS", sys, alpha, beta)
            op = precond.build_operator(sys, cfg)
        elif preset == "NONE":
            op = None
        else:
            cfg = precond.preset_config(preset, sys, alpha, beta)
            if preset in precond.SINGLE_PARAMETER:
                t_beta = None
            op = precond.build_operator(sys, cfg)
    except (ValueError, np.linalg.LinAlgError) as exc:
        elapsed = time.perf_counter() - start
        return ResultRow(preset, t_alpha, t_beta, alpha, beta, 0, elapsed, elapsed, 0.0,
                         float("nan"), None, False, "build-failure", str(exc))
    build_time = time.perf_counter() - start
    if solver == "fgmres":
        flex = None if op is None else (lambda v, _step: op.apply(v))
        _, report = krylov.fgmres(sys.matvec, b, flex, opts=options, exact=exact)
    else:
        _, report = krylov.gmres(sys.matvec, b, op, opts=options, exact=exact)
    cpu = time.perf_counter() - start
    return ResultRow(
        preset, t_alpha, t_beta, alpha, beta if preset != "NONE" else None,
        report.iterations, cpu, build_time, cpu - build_time,
        float(report.final_residual), None if report.error is None else float(report.error),
        bool(report.converged), report.stop_reason,
    )


def cells(spec: SweepSpec) -> list[tuple[str, Optional[float], Optional[float]]]:
    out = []
    for preset in spec.presets:
        preset = preset.upper()
        if preset in ("SEPSS*", "SEPSS**", "NONE"):
            out.append((preset, None, None))
        elif _single_parameter(preset):
            out.extend((preset, ta, None) for ta in spec.t_alpha)
        else:
            out.extend((preset, ta, tb) for ta in spec.t_alpha for tb in spec.t_beta)
    return out


def worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def sweep(spec: SweepSpec, sys: Optional[SaddleSystem] = None, workers: Optional[int] = None) -> list[ResultRow]:
    """Run every cell of the sweep; the result keeps the cell order of :func:`cells`."""
    if sys is None:
        sys = generate(spec.problem)
    b = rhs_from_ones(sys).stack()
    exact = np.ones(sys.size) if known_nonsingular(sys, spec.problem) else None
    todo = cells(spec)

    def one(cell):
        preset, ta, tb = cell
        alpha = None if ta is None else 10.0 ** ta
        beta = None if tb is None else 10.0 ** tb
        row = run_cell(sys, preset, alpha, beta, b, spec.options, exact, spec.solver)
        if ta is not None:
            row.t_alpha = ta
        if tb is not None:
            row.t_beta = tb
        log.debug("%s t_alpha=%s t_beta=%s IT=%d", preset, ta, tb, row.iterations)
        return row

    workers = workers or worker_count()
    if workers == 1:
        return [one(c) for c in todo]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, todo))


def select_best(rows: Iterable[ResultRow]) -> dict[str, ResultRow]:
    """Per preset: fewest iterations among converged rows, ties broken by CPU time."""
    best: dict[str, ResultRow] = {}
    for row in rows:
        if not row.converged:
            continue
        cur = best.get(row.preset)
        if cur is None or (row.iterations, row.cpu) < (cur.iterations, cur.cpu):
            best[row.preset] = row
    return best


COLUMNS = [f.name for f in fields(ResultRow)]


def render(rows: Sequence[ResultRow], fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps([r.as_dict() for r in rows], indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _cell_text(v) for k, v in r.as_dict().items()})
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    table = [COLUMNS] + [[_cell_text(v) for v in r.as_dict().values()] for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(COLUMNS))]
    return "\n".join(
        "  ".join(text.ljust(w) for text, w in zip(line, widths)).rstrip() for line in table
    )


def _cell_text(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value == "":
        return "-"
    return str(value)


def parse_text(text: str) -> list[dict]:
    """Read back :func:`render` text output (used to check that renderings agree)."""
    lines = [l for l in text.splitlines() if l.strip()]
    header = lines[0].split()
    out = []
    for line in lines[1:]:
        parts = line.split()
        parts += ["-"] * (len(header) - len(parts))
        out.append(dict(zip(header, parts)))
    return out
