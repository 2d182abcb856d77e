from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pytest

from regime_riccati import (Cone, ConeKind, Generator, LqCoefficients, MvMarket, ProblemSpec,
                            TimeGrid)

ROOT = Path(__file__).resolve().parents[1]
SPECS = ROOT / "demos" / "specs"

_ACCEPTANCE: List[Tuple[int, bool, str, str]] = []


def record(number: int, ok: bool, title: str, detail: str) -> None:
    """Remember one acceptance verdict for the terminal summary."""
    _ACCEPTANCE.append((number, bool(ok), title, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, title, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{verdict} criterion {number:2d}: {title} | {detail}")


def mv_spec(regimes, q, T=1.0, n_steps=2000, cone: Optional[Cone] = None, x=1.0, i0=0,
            delta=1e-8) -> ProblemSpec:
    grid = TimeGrid(T, n_steps)
    mv = MvMarket.build(grid, regimes, delta=delta)
    cone = Cone.full(mv.m) if cone is None else cone
    return ProblemSpec(Generator(q), grid, mv, cone, i0=i0, x=x)


def single_regime(r=0.05, b=0.1, sigma=0.2, T=1.0, n_steps=2000, cone=None, x=1.0):
    return mv_spec([{"r": r, "mu": [r + b], "sigma": [[sigma]]}], [[0.0]], T, n_steps, cone, x)


def random_generator(rng: np.random.Generator, ell: int, scale=2.0) -> np.ndarray:
    q = rng.uniform(0.2, scale, (ell, ell))
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def random_market(rng: np.random.Generator, ell: int, m: int = 1, n: Optional[int] = None,
                  common_rate: bool = False, cone_kind: str = "full", n_steps: int = 400,
                  x: float = 1.0) -> ProblemSpec:
    """Random market with positive rates, volatilities bounded away from
    singular and at least one positive excess return in regime 0."""
    n = m + int(rng.integers(0, 2)) if n is None else n
    r0 = rng.uniform(0.0, 0.06)
    regimes = []
    for i in range(ell):
        r = r0 if common_rate else rng.uniform(0.0, 0.06)
        b = rng.uniform(-0.05, 0.15, m)
        if i == 0:
            b[0] = abs(b[0]) + 0.02
        sigma = 0.25 * np.eye(m, n) + 0.05 * rng.standard_normal((m, n))
        regimes.append({"r": r, "mu": list(r + b), "sigma": sigma.tolist()})
    cone = Cone(ConeKind(cone_kind), m)
    return mv_spec(regimes, random_generator(rng, ell), 1.0, n_steps, cone, x)


def random_lq(rng: np.random.Generator, ell: int, m: int, cone: Cone, flag="standard",
              n_steps: int = 200, n: Optional[int] = None) -> ProblemSpec:
    """Random general LQ problem with certified regularity."""
    n = m if n is None else n
    grid = TimeGrid(1.0, n_steps)
    regimes, certs = [], []
    for _ in range(ell):
        D = 0.6 * rng.standard_normal((n, m))
        while flag == "singular" and np.linalg.eigvalsh(D.T @ D)[0] < 0.3:
            # keep the singular problems away from stiffness
            D = np.eye(n, m) + 0.3 * rng.standard_normal((n, m))
        if flag == "standard":
            L = rng.standard_normal((m, m))
            R = 0.3 * L @ L.T + 0.5 * np.eye(m)
            certs.append(np.linalg.eigvalsh(R)[0])
        else:
            R = np.zeros((m, m))
        G = rng.uniform(0.5, 2.0)
        if flag == "singular":
            certs.extend([np.linalg.eigvalsh(D.T @ D)[0], G])
        regimes.append({"A": rng.uniform(-0.3, 0.3), "B": rng.standard_normal(m).tolist(),
                        "C": (0.3 * rng.standard_normal(n)).tolist(), "D": D.tolist(),
                        "Q": rng.uniform(0.0, 1.0), "R": R.tolist(), "G": G})
    coef = LqCoefficients.build(grid, regimes, flag=flag, delta=0.9 * min(certs), m=m, n=n)
    return ProblemSpec(Generator(random_generator(rng, ell)), grid, coef, cone)


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)
