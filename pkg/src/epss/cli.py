"""Command-line entry point: ``epss sweep|run|certify|gen``.

Options can come from a JSON file (``--config``) whose keys are the long flag
names with dashes or underscores; flags given on the command line win.
Exit codes: 0 converged/certified, 1 certified-false or non-converged, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys as _sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis, bench, linalg, precond
from .krylov import SolveOptions
from .problems import ProblemSpec, generate, rhs_from_ones, save_system

log = logging.getLogger("epss")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULTS = {
    "problem": "oseen-fd",
    "manifest": None,
    "grid": 16,
    "nu": 0.01,
    "wind": "recirculating",
    "n": 30,
    "m": 10,
    "rank_b": None,
    "null_c": 1,
    "seed": 0,
    "preset": "SEPSS",
    "talpha": None,
    "tbeta": None,
    "solver": "gmres",
    "restart": 20,
    "tol": 1e-9,
    "max_iters": 1000,
    "max_time": 1000.0,
    "format": "text",
    "out": None,
    "workers": None,
}


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    # every default is None so that "given on the command line" is detectable
    g = p.add_argument_group("problem")
    g.add_argument("--config", help="JSON file with option values (flags override it)")
    g.add_argument("--problem", choices=["oseen-fd", "synthetic-singular", "imported"])
    g.add_argument("--manifest", help="manifest.json (or its directory) for --problem imported")
    g.add_argument("--grid", type=int, help="Oseen grid size q (even)")
    g.add_argument("--nu", type=float, help="viscosity")
    g.add_argument("--wind", choices=["recirculating", "none"])
    g.add_argument("--n", type=int, help="synthetic: velocity block size")
    g.add_argument("--m", type=int, help="synthetic: pressure block size")
    g.add_argument("--rank-b", type=int, dest="rank_b")
    g.add_argument("--null-c", type=int, dest="null_c")
    g.add_argument("--seed", type=int)
    o = p.add_argument_group("output")
    o.add_argument("--format", choices=["json", "csv", "text"])
    o.add_argument("--out", help="write the report here instead of stdout")
    o.add_argument("-v", "--verbose", action="store_true")


def _add_solver(p: argparse.ArgumentParser) -> None:
    s = p.add_argument_group("solver")
    s.add_argument("--solver", choices=["gmres", "fgmres"])
    s.add_argument("--restart", type=int)
    s.add_argument("--tol", type=float, help="relative residual reduction")
    s.add_argument("--max-iters", type=int, dest="max_iters")
    s.add_argument("--max-time", type=float, dest="max_time")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="grid search over t_alpha, t_beta for one or more presets")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--preset", help="comma-separated presets (also SEPSS*, SEPSS**, NONE)")
    p.add_argument("--talpha", help="t_alpha values: start:step:stop or a,b,c (default -4:0.25:4)")
    p.add_argument("--tbeta", help="t_beta values (same syntax)")
    p.add_argument("--workers", type=int, help=f"worker threads (default ${bench.WORKERS_ENV} or CPU count)")

    p = sub.add_parser("run", help="single preconditioned solve")
    _add_common(p)
    _add_solver(p)
    p.add_argument("--preset")
    p.add_argument("--talpha", type=float, help="alpha = 10**talpha")
    p.add_argument("--tbeta", type=float, help="beta = 10**tbeta")

    p = sub.add_parser("certify", help="dense semi-convergence certificate (small problems)")
    _add_common(p)
    p.add_argument("--preset")
    p.add_argument("--talpha", type=float)
    p.add_argument("--tbeta", type=float)

    p = sub.add_parser("gen", help="write a problem as MatrixMarket files plus manifest.json")
    _add_common(p)
    return parser


def merge_options(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            opts[key] = value
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            opts[key] = value
    return opts


def problem_spec(opts: dict) -> ProblemSpec:
    return ProblemSpec(
        kind=opts["problem"],
        grid=int(opts["grid"]),
        viscosity=float(opts["nu"]),
        wind=opts["wind"],
        seed=int(opts["seed"]),
        n=int(opts["n"]),
        m=int(opts["m"]),
        rank_b=None if opts["rank_b"] is None else int(opts["rank_b"]),
        null_c=int(opts["null_c"]),
        path=opts["manifest"],
    )


def solve_options(opts: dict) -> SolveOptions:
    return SolveOptions(
        restart=int(opts["restart"]),
        rel_tol=float(opts["tol"]),
        max_iters=int(opts["max_iters"]),
        max_time=float(opts["max_time"]),
    )


def _emit(text: str, opts: dict) -> None:
    if opts["out"]:
        Path(opts["out"]).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _scalar(value, default: float) -> float:
    if value is None:
        return default
    if isinstance(value, str):
        value = bench.parse_range(value)[0]
    return float(value)


def cmd_sweep(opts: dict) -> int:
    presets = opts["preset"]
    if isinstance(presets, str):
        presets = [p.strip() for p in presets.split(",") if p.strip()]
    ranges = {}
    for key in ("talpha", "tbeta"):
        value = opts[key]
        if value is None:
            ranges[key] = bench.default_range()
        elif isinstance(value, (list, tuple)):
            ranges[key] = [float(v) for v in value]
        else:
            ranges[key] = bench.parse_range(value)
    spec = bench.SweepSpec(
        problem=problem_spec(opts),
        presets=presets,
        t_alpha=ranges["talpha"],
        t_beta=ranges["tbeta"],
        options=solve_options(opts),
        solver=opts["solver"],
    )
    rows = bench.sweep(spec, workers=opts["workers"])
    best = bench.select_best(rows)
    fmt = opts["format"]
    if fmt == "json":
        text = json.dumps(
            {"rows": [r.as_dict() for r in rows], "best": {k: v.as_dict() for k, v in best.items()}},
            indent=2,
        )
    elif fmt == "csv":
        text = bench.render(rows, "csv")
    else:
        text = bench.render(rows, "text") + "\n\nbest per preset (min IT, then min CPU):\n"
        text += bench.render(list(best.values()), "text") if best else "(no converged cell)"
    _emit(text, opts)
    missing = [p.upper() for p in presets if p.upper() not in best]
    return EXIT_FAIL if missing else EXIT_OK


def _single_preset(opts: dict, allowed) -> str:
    preset = str(opts["preset"]).upper()
    if preset not in allowed:
        raise UsageError(f"unknown preset {opts['preset']!r}; choose from {', '.join(allowed)}")
    return preset


def cmd_run(opts: dict) -> int:
    preset = _single_preset(opts, precond.PRESETS + bench.EXTRA_PRESETS)
    spec = problem_spec(opts)
    system = generate(spec)
    b = rhs_from_ones(system).stack()
    exact = np.ones(system.size) if bench.known_nonsingular(system, spec) else None
    alpha = 10.0 ** _scalar(opts["talpha"], 0.0)
    beta = None if opts["tbeta"] is None else 10.0 ** _scalar(opts["tbeta"], 0.0)
    if preset == "NONE":
        alpha = None
    row = bench.run_cell(system, preset, alpha, beta, b, solve_options(opts), exact, opts["solver"])
    fmt = opts["format"]
    if fmt == "json":
        text = json.dumps(row.as_dict(), indent=2)
    elif fmt == "csv":
        text = bench.render([row], "csv")
    else:
        text = bench.render([row], "text") + "\n" + json.dumps(row.as_dict())
    _emit(text, opts)
    return EXIT_OK if row.converged else EXIT_FAIL


def _fmt_bool(flag: bool) -> str:
    return "true" if flag else "false"


def cmd_certify(opts: dict) -> int:
    preset = _single_preset(opts, precond.PRESETS)
    spec = problem_spec(opts)
    system = generate(spec)
    if system.size > linalg.MAX_DENSE_EIG:
        raise UsageError(
            f"certify is dense: n + m = {system.size} exceeds the limit {linalg.MAX_DENSE_EIG}"
        )
    alpha = 10.0 ** _scalar(opts["talpha"], 0.0)
    beta = None if opts["tbeta"] is None else 10.0 ** _scalar(opts["tbeta"], 0.0)
    cfg = precond.preset_config(preset, system, alpha, beta)
    spectral = analysis.certify(system, cfg)
    corollary = analysis.corollary_check(system, cfg)
    theorem = analysis.theorem_condition_check(system, cfg, spectral)
    payload = {
        "preset": preset,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "n": system.n,
        "m": system.m,
        "spectral": spectral.as_dict(),
        "corollary": corollary.as_dict(),
        "theorem_violations": [
            {"lambda": [lam.real, lam.imag], "basis_index": i} for lam, i, bad in theorem if bad
        ],
        "verdict": spectral.semi_convergent,
    }
    if opts["format"] == "json":
        text = json.dumps(payload, indent=2)
    else:
        text = "\n".join([
            f"preset = {preset}  alpha = {cfg.alpha!r}  beta = {cfg.beta!r}  (n, m) = ({system.n}, {system.m})",
            f"rho = {spectral.rho!r}",
            f"nu = {spectral.nu!r}",
            f"unit eigenvalue: {_fmt_bool(spectral.has_unit_eigenvalue)} "
            f"(multiplicity {spectral.unit_multiplicity})",
            f"rank(I - Gamma) = {spectral.rank_i_minus_gamma}, "
            f"rank((I - Gamma)^2) = {spectral.rank_i_minus_gamma_sq}",
            f"index-one = {_fmt_bool(spectral.index_one)}",
            "corollary conditions: "
            + ", ".join(f"{k} = {_fmt_bool(corollary.as_dict()[k])}"
                        for k in ("null_in_null_c", "condition_1", "condition_2", "condition_3", "condition_4")),
            f"semi-convergent = {_fmt_bool(spectral.semi_convergent)}",
            "",
            json.dumps(payload),
        ])
    _emit(text, opts)
    return EXIT_OK if spectral.semi_convergent else EXIT_FAIL


def cmd_gen(opts: dict) -> int:
    spec = problem_spec(opts)
    if spec.kind == "imported":
        raise UsageError("gen writes generated problems; --problem imported makes no sense here")
    if not opts["out"]:
        raise UsageError("gen needs --out <directory>")
    system = generate(spec)
    path = save_system(system, opts["out"], spec)
    print(json.dumps({"manifest": str(path), "n": system.n, "m": system.m}))
    return EXIT_OK


COMMANDS = {"sweep": cmd_sweep, "run": cmd_run, "certify": cmd_certify, "gen": cmd_gen}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        opts = merge_options(args)
        return COMMANDS[args.command](opts)
    except (UsageError, ValueError, OSError) as exc:
        print(f"epss {args.command}: error: {exc}", file=_sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    _sys.exit(main())
