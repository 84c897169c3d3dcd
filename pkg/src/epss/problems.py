"""Test problems and MatrixMarket storage.

``gen_oseen`` is a finite-difference stand-in for a stabilized Q1-P0
discretization of the 2-D Oseen equations on the cavity ``[-1, 1]^2``:

* velocities live on the ``(q+1)^2`` grid vertices (two components, boundary
  vertices kept as decoupled Dirichlet rows), pressures on the ``q^2`` cells;
* ``A = nu * L + N`` with ``L`` the five-point Laplacian (scaled by ``h^2``)
  and ``N`` an exactly skew-symmetric centred convection operator for the
  recirculating wind ``w = (2y(1-x^2), -2x(1-y^2))``;
* ``B`` is the cell-integrated divergence of the bilinear velocity field, with
  columns of boundary vertices removed;
* ``C = gamma * S`` where ``S`` couples the four cells of each 2x2 macroelement
  through a cyclic graph Laplacian, so constants per macroelement (in
  particular the global constant pressure) lie in ``null(C)``.

The constant pressure is in ``null(B^T)`` too, so the assembled system is
singular with a one-dimensional null space, like the cavity problems it mimics.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from . import linalg
from .linalg import as_csr
from .saddle import BlockVector, SaddleSystem

KINDS = ("oseen-fd", "synthetic-singular", "imported")
WINDS = ("recirculating", "none")


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "oseen-fd"
    grid: int = 16
    viscosity: float = 0.01
    wind: str = "recirculating"
    stabilization: Optional[float] = None
    seed: int = 0
    n: int = 30
    m: int = 10
    rank_b: Optional[int] = None
    null_c: int = 1
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "oseen-fd":
            if self.grid < 4:
                raise ValueError(f"grid must be at least 4, got {self.grid}")
            if self.grid % 2:
                raise ValueError(f"grid must be even (2x2 macroelements), got {self.grid}")
            if not self.viscosity > 0:
                raise ValueError("viscosity must be positive")
            if self.wind not in WINDS:
                raise ValueError(f"unknown wind {self.wind!r}")
        if self.kind == "synthetic-singular":
            rank_b = self.m - 1 if self.rank_b is None else self.rank_b
            if not 0 <= rank_b <= self.m or self.m > self.n:
                raise ValueError(f"infeasible sizes n={self.n}, m={self.m}, rank(B)={rank_b}")
            if not 0 <= self.null_c <= self.m:
                raise ValueError(f"infeasible dim null(C) = {self.null_c} for m = {self.m}")

    def as_dict(self) -> dict:
        return asdict(self)


def oseen_sizes(q: int) -> tuple[int, int]:
    return 2 * (q + 1) ** 2, q * q


def recirculating_wind(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return 2.0 * y * (1.0 - x * x), -2.0 * x * (1.0 - y * y)


def _velocity_operators(q: int, wind: str) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Scalar Laplacian and convection on the vertex grid (one component)."""
    h = 2.0 / q
    nv = q + 1
    idx = np.arange(nv * nv).reshape(nv, nv)  # idx[j, i]
    interior = np.zeros((nv, nv), dtype=bool)
    interior[1:-1, 1:-1] = True
    rows, cols, vals = [], [], []
    crow, ccol, cval = [], [], []
    for j in range(nv):
        for i in range(nv):
            P = idx[j, i]
            if not interior[j, i]:
                rows.append(P), cols.append(P), vals.append(1.0)
                continue
            rows.append(P), cols.append(P), vals.append(4.0)
            for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                if interior[j + dj, i + di]:
                    rows.append(P), cols.append(idx[j + dj, i + di]), vals.append(-1.0)
            if wind == "none":
                continue
            # east and north edges, each stored once as a skew pair
            x, y = -1.0 + i * h, -1.0 + j * h
            if interior[j, i + 1]:
                c = 0.5 * h * recirculating_wind(np.array(x + 0.5 * h), np.array(y))[0]
                E = idx[j, i + 1]
                crow += [P, E]
                ccol += [E, P]
                cval += [float(c), -float(c)]
            if interior[j + 1, i]:
                c = 0.5 * h * recirculating_wind(np.array(x), np.array(y + 0.5 * h))[1]
                Nn = idx[j + 1, i]
                crow += [P, Nn]
                ccol += [Nn, P]
                cval += [float(c), -float(c)]
    size = nv * nv
    L = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    Nc = sp.csr_matrix((cval, (crow, ccol)), shape=(size, size))
    return as_csr(L), as_csr(Nc)


def _divergence(q: int) -> sp.csr_matrix:
    h = 2.0 / q
    nv = q + 1
    nvel = nv * nv

    def vid(i: int, j: int) -> int:
        return j * nv + i

    def boundary(i: int, j: int) -> bool:
        return i in (0, q) or j in (0, q)

    rows, cols, vals = [], [], []
    for cj in range(q):
        for ci in range(q):
            p = cj * q + ci
            corners = ((ci, cj), (ci + 1, cj), (ci, cj + 1), (ci + 1, cj + 1))
            for (i, j) in corners:
                if boundary(i, j):
                    continue
                sx = 1.0 if i == ci + 1 else -1.0
                sy = 1.0 if j == cj + 1 else -1.0
                rows += [p, p]
                cols += [vid(i, j), nvel + vid(i, j)]
                vals += [0.5 * h * sx, 0.5 * h * sy]
    return as_csr(sp.csr_matrix((vals, (rows, cols)), shape=(q * q, 2 * nvel)))


def _macro_stabilization(q: int) -> sp.csr_matrix:
    local = np.array(
        [[2.0, -1.0, 0.0, -1.0], [-1.0, 2.0, -1.0, 0.0], [0.0, -1.0, 2.0, -1.0], [-1.0, 0.0, -1.0, 2.0]]
    )
    rows, cols, vals = [], [], []
    for mj in range(q // 2):
        for mi in range(q // 2):
            ci, cj = 2 * mi, 2 * mj
            cells = [cj * q + ci, cj * q + ci + 1, (cj + 1) * q + ci + 1, (cj + 1) * q + ci]
            for a in range(4):
                for b in range(4):
                    if local[a, b]:
                        rows.append(cells[a]), cols.append(cells[b]), vals.append(local[a, b])
    return as_csr(sp.csr_matrix((vals, (rows, cols)), shape=(q * q, q * q)))


def gen_oseen(spec: ProblemSpec) -> SaddleSystem:
    if spec.kind != "oseen-fd":
        raise ValueError(f"gen_oseen needs kind 'oseen-fd', got {spec.kind!r}")
    q = spec.grid
    h = 2.0 / q
    L, Nc = _velocity_operators(q, spec.wind)
    block = as_csr(spec.viscosity * L + Nc)
    A = as_csr(sp.block_diag([block, block], format="csr"))
    if not linalg.is_positive_definite(A):
        raise ArithmeticError("generated convection-diffusion block is not positive definite")
    gamma = 0.25 * h * h if spec.stabilization is None else spec.stabilization
    C = as_csr(gamma * _macro_stabilization(q))
    return SaddleSystem(A, _divergence(q), C)


def gen_synthetic_singular(spec: ProblemSpec) -> SaddleSystem:
    """Random dense-ish instance with controlled rank(B) and null(C).

    ``A = G^T G / n + I/2 + K`` (PD, nonsymmetric), ``C = Q diag(d) Q^T`` with
    ``null_c`` zero entries in ``d``, and ``B`` whose left null space is spanned
    by the first ``m - rank_b`` columns of the same orthogonal ``Q``.  The two
    null spaces are nested, so ``null(B^T) ∩ null(C)`` has dimension
    ``min(m - rank_b, null_c)``.
    """
    if spec.kind != "synthetic-singular":
        raise ValueError(f"gen_synthetic_singular needs kind 'synthetic-singular', got {spec.kind!r}")
    n, m = spec.n, spec.m
    rank_b = m - 1 if spec.rank_b is None else spec.rank_b
    rng = np.random.default_rng(spec.seed)
    G = rng.standard_normal((n, n))
    H = rng.standard_normal((n, n))
    A = G.T @ G / n + 0.5 * np.eye(n) + 0.5 * (H - H.T)
    Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
    d = rng.uniform(0.5, 2.0, m)
    d[: spec.null_c] = 0.0
    C = (Q * d) @ Q.T
    C = 0.5 * (C + C.T)
    left_null = m - rank_b
    B = Q[:, left_null:] @ rng.standard_normal((rank_b, n))
    return SaddleSystem(sp.csr_matrix(A), sp.csr_matrix(B), sp.csr_matrix(C))


def generate(spec: ProblemSpec) -> SaddleSystem:
    if spec.kind == "oseen-fd":
        return gen_oseen(spec)
    if spec.kind == "synthetic-singular":
        return gen_synthetic_singular(spec)
    if spec.path is None:
        raise ValueError("imported problems need a manifest path")
    return load_system(spec.path)


def rhs_from_ones(sys: SaddleSystem) -> BlockVector:
    """``b = calA e`` with ``e`` all ones; consistent even for singular systems."""
    return BlockVector.split(sys.matvec(np.ones(sys.size)), sys.n)


# MatrixMarket --------------------------------------------------------------------

class MatrixMarketError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


_HEADER = re.compile(
    r"^%%matrixmarket\s+matrix\s+coordinate\s+(real|integer)\s+(general|symmetric)\s*$",
    re.IGNORECASE,
)


def write_matrix_market(A, path: Union[str, Path], symmetric: bool = False, comment: str = "") -> None:
    """Coordinate format with 17 significant digits, so reading back is bit-exact."""
    A = sp.coo_matrix(as_csr(A))
    if symmetric:
        if (as_csr(A) - as_csr(A).T).count_nonzero():
            raise ValueError("matrix is not symmetric")
        keep = A.row >= A.col
        rows, cols, vals = A.row[keep], A.col[keep], A.data[keep]
    else:
        rows, cols, vals = A.row, A.col, A.data
    order = np.lexsort((rows, cols))
    lines = [f"%%MatrixMarket matrix coordinate real {'symmetric' if symmetric else 'general'}"]
    for text in comment.splitlines():
        lines.append(f"% {text}")
    lines.append(f"{A.shape[0]} {A.shape[1]} {len(vals)}")
    for k in order:
        lines.append(f"{rows[k] + 1} {cols[k] + 1} {vals[k]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_market(path: Union[str, Path]) -> sp.csr_matrix:
    with open(path) as fh:
        text = fh.read().splitlines()
    if not text:
        raise MatrixMarketError(1, "empty file")
    match = _HEADER.match(text[0].strip())
    if not match:
        raise MatrixMarketError(1, f"unsupported or malformed header {text[0]!r}")
    symmetric = match.group(2).lower() == "symmetric"
    lineno = 1
    size = None
    rows, cols, vals = [], [], []
    seen = set()
    for lineno, raw in enumerate(text[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        fields = line.split()
        if size is None:
            if len(fields) != 3:
                raise MatrixMarketError(lineno, "size line needs 'rows cols entries'")
            try:
                size = tuple(int(f) for f in fields)
            except ValueError:
                raise MatrixMarketError(lineno, f"non-integer size line {line!r}") from None
            if min(size) < 0:
                raise MatrixMarketError(lineno, "negative size")
            if symmetric and size[0] != size[1]:
                raise MatrixMarketError(lineno, "symmetric matrix must be square")
            continue
        if len(fields) != 3:
            raise MatrixMarketError(lineno, f"entry needs 'row col value', got {line!r}")
        try:
            i, j = int(fields[0]), int(fields[1])
            v = float(fields[2])
        except ValueError:
            raise MatrixMarketError(lineno, f"unparsable entry {line!r}") from None
        if not (1 <= i <= size[0] and 1 <= j <= size[1]):
            raise MatrixMarketError(lineno, f"index ({i}, {j}) outside {size[0]} x {size[1]}")
        if not np.isfinite(v):
            raise MatrixMarketError(lineno, f"non-finite value {fields[2]!r}")
        if symmetric and j > i:
            raise MatrixMarketError(lineno, "symmetric storage must hold the lower triangle only")
        if (i, j) in seen:
            raise MatrixMarketError(lineno, f"duplicate entry ({i}, {j})")
        if len(seen) >= size[2]:
            raise MatrixMarketError(lineno, f"more entries than the declared {size[2]}")
        seen.add((i, j))
        rows.append(i - 1), cols.append(j - 1), vals.append(v)
        if symmetric and i != j:
            rows.append(j - 1), cols.append(i - 1), vals.append(v)
    if size is None:
        raise MatrixMarketError(lineno, "missing size line")
    if len(seen) != size[2]:
        raise MatrixMarketError(lineno, f"declared {size[2]} entries, found {len(seen)}")
    return as_csr(sp.csr_matrix((vals, (rows, cols)), shape=size[:2]))


def save_system(sys: SaddleSystem, directory: Union[str, Path], spec: Optional[ProblemSpec] = None) -> Path:
    """Write ``A.mtx``, ``B.mtx``, ``C.mtx`` and ``manifest.json``; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name, M in (("A", sys.A), ("B", sys.B), ("C", sys.C)):
        write_matrix_market(M, out / f"{name}.mtx")
    manifest = {
        "n": sys.n,
        "m": sys.m,
        "blocks": {"x": [0, sys.n], "y": [sys.n, sys.n + sys.m]},
        "files": {"A": "A.mtx", "B": "B.mtx", "C": "C.mtx"},
        "layout": "[[A, B^T], [-B, C]]",
    }
    if spec is not None:
        manifest["problem"] = spec.as_dict()
        if spec.kind == "oseen-fd":
            manifest["wind_note"] = (
                "recirculating wind (2y(1-x^2), -2x(1-y^2)) is a stand-in for the cavity wind"
                if spec.wind == "recirculating" else "no convection (Stokes)"
            )
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_system(manifest_path: Union[str, Path]) -> SaddleSystem:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    meta = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    blocks = {k: read_matrix_market(base / meta["files"][k]) for k in ("A", "B", "C")}
    sys = SaddleSystem(blocks["A"], blocks["B"], blocks["C"])
    if (sys.n, sys.m) != (meta["n"], meta["m"]):
        raise ValueError(f"manifest sizes ({meta['n']}, {meta['m']}) disagree with files ({sys.n}, {sys.m})")
    return sys
