"""TOML problem files and versioned CSV outputs.

A problem file looks like::

    [generator]
    ell = 2
    rows = [[-1.0, 1.0], [2.0, -2.0]]

    [grid]
    T = 1.0
    n_steps = 2000

    [initial]
    x = 1.0
    i0 = 0

    [cone]
    kind = "full"            # "orthant", or "rays" with rays = [[...], ...]

    [[regime]]
    index = 0
    r = 0.05
    mu = [0.10]
    sigma = [[0.20]]         # m x n, row-major

Regimes carry either ``r, mu, sigma`` (a mean-variance market) or
``A, B, C, D, Q, R, G`` (a general LQ problem, which also needs a
``[regularity]`` table with ``flag`` and ``delta``).  A scalar or a single
vector/matrix is broadcast to every node; a list with ``n_steps + 1``
leading entries gives one value per node.  An optional ``[dimensions]``
table with ``m`` and ``n`` fixes the control and noise dimensions when
they cannot be read off the first regime.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import tomli

from .cone import Cone, ConeKind
from .errors import InvalidMarket
from .esre import EsreSolution
from .market import Generator, LqCoefficients, MvMarket, ProblemSpec, TimeGrid

CSV_HEADER = "# regime-riccati v1"
DEFAULT_STEPS = 2000
MV_KEYS = {"r", "mu", "sigma"}
LQ_KEYS = {"A", "B", "C", "D", "Q", "R", "G"}


def _section(doc: dict, name: str) -> dict:
    if name not in doc or not isinstance(doc[name], dict):
        raise InvalidMarket(f"missing [{name}] section")
    return doc[name]


def _regimes(doc: dict, ell: int) -> list:
    blocks = doc.get("regime")
    if not isinstance(blocks, list) or not blocks:
        raise InvalidMarket("missing [[regime]] blocks")
    by_index = {}
    for pos, block in enumerate(blocks):
        idx = int(block.get("index", pos))
        if idx in by_index:
            raise InvalidMarket(f"regime index {idx} appears twice")
        by_index[idx] = block
    if sorted(by_index) != list(range(ell)):
        raise InvalidMarket(f"regime indices must be 0..{ell - 1}, got {sorted(by_index)}")
    return [by_index[i] for i in range(ell)]


def _cone(doc: dict, m: int) -> Cone:
    sec = doc.get("cone", {"kind": "full"})
    kind = ConeKind(str(sec.get("kind", "full")).lower())
    if kind is ConeKind.RAYS:
        rays = sec.get("rays")
        if not rays:
            raise InvalidMarket("cone kind 'rays' needs a non-empty rays list")
        cone = Cone.from_rays(rays)
        if cone.dim != m:
            raise InvalidMarket(f"rays have dimension {cone.dim}, controls have {m}")
        return cone
    return Cone(kind, m)


def _vector_size(value, n_nodes: int) -> int:
    # per-node tables carry a leading axis of length n_nodes; a [dimensions]
    # table settles the rare ambiguous case
    a = np.asarray(value, dtype=float)
    if a.ndim > 1 and a.shape[0] == n_nodes:
        return int(a[0].size)
    return int(a.size)


def spec_from_dict(doc: dict, n_steps: Optional[int] = None) -> ProblemSpec:
    gen_sec = _section(doc, "generator")
    rows = np.asarray(gen_sec["rows"], dtype=float)
    ell = int(gen_sec.get("ell", rows.shape[0]))
    if rows.shape != (ell, ell):
        raise InvalidMarket(f"generator rows must be {ell}x{ell}, got {rows.shape}")
    grid_sec = _section(doc, "grid")
    steps = n_steps if n_steps is not None else int(grid_sec.get("n_steps", DEFAULT_STEPS))
    grid = TimeGrid(float(grid_sec["T"]), steps)
    init = doc.get("initial", {})
    x = float(init.get("x", 1.0))
    i0 = int(init.get("i0", 0))
    regimes = _regimes(doc, ell)
    keys = set().union(*(set(b) for b in regimes)) - {"index"}
    N = grid.n_nodes
    dims = doc.get("dimensions", {})
    first = regimes[0]
    if keys & MV_KEYS and not keys & LQ_KEYS:
        m = int(dims.get("m", _vector_size(first["mu"], N)))
        n = int(dims.get("n", _vector_size(first["sigma"], N) // m))
        delta = float(doc.get("regularity", {}).get("delta", 1e-8))
        coef = MvMarket.build(grid, regimes, delta=delta, m=m, n=n)
    elif keys & LQ_KEYS and not keys & MV_KEYS:
        reg = _section(doc, "regularity")
        m = int(dims.get("m", _vector_size(first["B"], N)))
        if "n" in dims:
            n = int(dims["n"])
        elif "C" in first:
            n = _vector_size(first["C"], N)
        else:
            n = _vector_size(first["D"], N) // m
        coef = LqCoefficients.build(grid, regimes, flag=str(reg.get("flag", "standard")).lower(),
                                    delta=float(reg["delta"]), m=m, n=n)
    else:
        raise InvalidMarket("regimes must use either r/mu/sigma or A/B/C/D/Q/R/G keys, not both")
    cone = _cone(doc, m)
    return ProblemSpec(Generator(rows), grid, coef, cone, i0=i0, x=x)


def load_spec(path, n_steps: Optional[int] = None) -> ProblemSpec:
    """Read a problem file; ``n_steps`` overrides the file's grid size."""
    with open(path, "rb") as fh:
        try:
            doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise InvalidMarket(f"{path}: {exc}") from exc
    try:
        return spec_from_dict(doc, n_steps)
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidMarket(f"{path}: {exc!r}") from exc


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Columns of a CSV written by :func:`write_csv`, as float arrays."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {first!r}")
        reader = csv.reader(fh)
        names = next(reader)
        data = [[float(v) for v in row] for row in reader]
    arr = np.array(data, dtype=float).reshape(-1, len(names))
    return {name: arr[:, j] for j, name in enumerate(names)}


def node_rows(grid: TimeGrid, *tables):
    """One row ``(t, regime, values...)`` per node and regime."""
    times = grid.times
    ell = tables[0].shape[1]
    for k, t in enumerate(times):
        for i in range(ell):
            yield (t, i, *(tab[k, i] for tab in tables))


def write_solution(path, sol: EsreSolution) -> Path:
    return write_csv(path, ["t", "regime", "P1", "P2"], node_rows(sol.grid, sol.P1, sol.P2))


def write_table(path, grid: TimeGrid, values: np.ndarray, name: str) -> Path:
    return write_csv(path, ["t", "regime", name], node_rows(grid, values))


def write_policy(path, grid: TimeGrid, v1: np.ndarray, v2: np.ndarray,
                 shift: Optional[np.ndarray] = None) -> Path:
    m = v1.shape[2]
    cols = ["t", "regime"] + [f"v1_{a}" for a in range(m)] + [f"v2_{a}" for a in range(m)]
    if shift is not None:
        cols.append("shift")
    rows = []
    for k, t in enumerate(grid.times):
        for i in range(v1.shape[1]):
            row = [t, i, *v1[k, i], *v2[k, i]]
            if shift is not None:
                row.append(shift[k, i])
            rows.append(row)
    return write_csv(path, cols, rows)


def write_frontier(path, rows) -> Path:
    return write_csv(path, ["z", "variance", "std_dev", "lambda_star"], rows)


def write_paths(path, rows, m: int) -> Path:
    cols = ["path_id", "t", "regime", "X"] + [f"u_{a}" for a in range(m)]
    return write_csv(path, cols, rows)
