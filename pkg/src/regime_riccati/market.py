"""Problem data for regime-switching LQ control and mean-variance markets.

Coefficients live on a uniform time grid as tables indexed
``[node, regime, ...]``.  Between nodes the value of the left node is in
force, which is also what the backward integrator and the simulator use.
Regimes are numbered from 0.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from .cone import Cone
from .errors import InvalidMarket

ROW_SUM_TOL = 1e-12


class Regularity(str, enum.Enum):
    STANDARD = "standard"
    SINGULAR = "singular"


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Generator:
    """Transition rate matrix of the regime chain."""

    q: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        object.__setattr__(self, "q", _frozen(q))

    @property
    def ell(self) -> int:
        return self.q.shape[0]

    def violations(self) -> List["Violation"]:
        out = []
        q = self.q
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
            return [Violation(f"generator must be a non-empty square matrix, got shape {q.shape}")]
        for i in range(q.shape[0]):
            for j in range(q.shape[1]):
                if i != j and q[i, j] < 0:
                    out.append(Violation(f"negative off-diagonal rate q[{i}][{j}] = {q[i, j]}", regime=i))
            s = q[i].sum()
            if abs(s) > ROW_SUM_TOL:
                out.append(Violation(f"row {i} sum ≠ 0 (sum = {s:.3e})", regime=i))
        return out


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if not (self.T > 0):
            raise InvalidMarket(f"horizon T must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise InvalidMarket(f"n_steps must be an integer >= 2, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    t0 = 0.0

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.dt

    def node(self, t: float) -> int:
        """Index of the left grid node for time ``t`` (the last node at T)."""
        from .errors import OutOfGrid

        if t < -1e-12 * self.T or t > self.T * (1 + 1e-12):
            raise OutOfGrid(f"t = {t} outside [0, {self.T}]")
        k = int(math.floor(t / self.dt + 1e-9))
        return min(max(k, 0), self.n_steps)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.n_steps * factor)


def _table(value, n_nodes: int, shape: tuple, name: str) -> np.ndarray:
    """Broadcast a constant (``shape``) or a per-node table
    (``(n_nodes,) + shape``) to the full node table."""
    a = np.asarray(value, dtype=float)
    size = int(np.prod(shape)) if shape else 1
    if a.size == size:
        return np.broadcast_to(a.reshape(shape), (n_nodes,) + shape).copy()
    if a.ndim >= 1 and a.shape[0] == n_nodes and a[0].size == size:
        return a.reshape((n_nodes,) + shape).copy()
    raise InvalidMarket(
        f"{name}: expected shape {shape} or ({n_nodes},)+{shape}, got {a.shape}")


@dataclass(frozen=True)
class LqCoefficients:
    """Per-regime coefficient tables of the general LQ problem.

    Shapes: A (N, l), B (N, l, m), C (N, l, n), D (N, l, n, m),
    Qcost (N, l), R (N, l, m, m), G (l,), where N is the number of grid
    nodes.  ``flag`` names the regularity regime that ``delta`` certifies.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Qcost: np.ndarray
    R: np.ndarray
    G: np.ndarray
    flag: Regularity = Regularity.STANDARD
    delta: float = 0.0

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "Qcost", "R", "G"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "flag", Regularity(self.flag))

    @classmethod
    def build(cls, grid: TimeGrid, regimes: list, flag="standard", delta: float = 0.0,
              m: Optional[int] = None, n: Optional[int] = None) -> "LqCoefficients":
        """Assemble tables from a list of per-regime dicts with keys
        A, B, C, D, Q, R, G.  Each value may be constant or a per-node table.
        """
        N = grid.n_nodes
        if m is None:
            m = int(np.asarray(regimes[0]["B"]).size)
        if n is None:
            n = int(np.asarray(regimes[0].get("C", np.zeros(1))).size)
        A, B, C, D, Q, R, G = [], [], [], [], [], [], []
        for i, reg in enumerate(regimes):
            A.append(_table(reg["A"], N, (), f"regime {i} A"))
            B.append(_table(reg["B"], N, (m,), f"regime {i} B"))
            C.append(_table(reg.get("C", np.zeros(n)), N, (n,), f"regime {i} C"))
            D.append(_table(reg["D"], N, (n, m), f"regime {i} D"))
            Q.append(_table(reg.get("Q", 0.0), N, (), f"regime {i} Q"))
            R.append(_table(reg.get("R", np.zeros((m, m))), N, (m, m), f"regime {i} R"))
            g = np.asarray(reg["G"], dtype=float)
            if g.size != 1:
                raise InvalidMarket(f"regime {i} G must be a scalar")
            G.append(float(g.reshape(())))
        return cls(np.stack(A, 1), np.stack(B, 1), np.stack(C, 1), np.stack(D, 1),
                   np.stack(Q, 1), np.stack(R, 1), np.array(G), flag, delta)

    @property
    def ell(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]

    @property
    def n(self) -> int:
        return self.C.shape[2]

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]

    def with_terminal(self, G) -> "LqCoefficients":
        G = np.broadcast_to(np.asarray(G, dtype=float), (self.ell,))
        return LqCoefficients(self.A, self.B, self.C, self.D, self.Qcost, self.R, G,
                              self.flag, self.delta)

    def violations(self) -> List["Violation"]:
        out = []
        N, ell, m, n = self.n_nodes, self.ell, self.m, self.n
        expected = {"A": (N, ell), "B": (N, ell, m), "C": (N, ell, n), "D": (N, ell, n, m),
                    "Qcost": (N, ell), "R": (N, ell, m, m), "G": (ell,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                out.append(Violation(f"{name} has shape {getattr(self, name).shape}, expected {shape}"))
        if out:
            return out
        for name in ("A", "B", "C", "D", "Qcost", "R", "G"):
            if not np.all(np.isfinite(getattr(self, name))):
                out.append(Violation(f"{name} contains non-finite values"))
        for i in range(ell):
            bad = np.nonzero(self.Qcost[:, i] < 0)[0]
            if bad.size:
                out.append(Violation(f"Qcost < 0, regime {i}", regime=i, node=int(bad[0])))
            asym = np.max(np.abs(self.R[:, i] - np.swapaxes(self.R[:, i], -1, -2)), axis=(-1, -2))
            bad = np.nonzero(asym > 1e-12)[0]
            if bad.size:
                out.append(Violation(f"R not symmetric, regime {i}", regime=i, node=int(bad[0])))
            if self.G[i] < 0:
                out.append(Violation(f"G < 0, regime {i}", regime=i))
        if not (self.delta > 0):
            out.append(Violation(f"regularity delta must be positive, got {self.delta}"))
            return out
        if self.flag is Regularity.STANDARD:
            lam = np.linalg.eigvalsh(0.5 * (self.R + np.swapaxes(self.R, -1, -2)))[..., 0]
            for i in range(ell):
                bad = np.nonzero(lam[:, i] < self.delta)[0]
                if bad.size:
                    out.append(Violation(f"R not >= delta*I (STANDARD), regime {i}",
                                         regime=i, node=int(bad[0])))
        else:
            DtD = np.einsum("tlkm,tlkp->tlmp", self.D, self.D)
            lam = np.linalg.eigvalsh(DtD)[..., 0]
            Rlam = np.linalg.eigvalsh(0.5 * (self.R + np.swapaxes(self.R, -1, -2)))[..., 0]
            for i in range(ell):
                if self.G[i] < self.delta:
                    out.append(Violation(f"G < delta (SINGULAR), regime {i}", regime=i))
                bad = np.nonzero(lam[:, i] < self.delta)[0]
                if bad.size:
                    out.append(Violation(f"D'D not >= delta*I (SINGULAR), regime {i}",
                                         regime=i, node=int(bad[0])))
                bad = np.nonzero(Rlam[:, i] < -1e-12)[0]
                if bad.size:
                    out.append(Violation(f"R not positive semidefinite, regime {i}",
                                         regime=i, node=int(bad[0])))
        return out


@dataclass(frozen=True)
class MvMarket:
    """Bond rate ``r`` (N, l), appreciation rates ``mu`` (N, l, m) and
    volatility ``sigma`` (N, l, m, n) per node and regime."""

    r: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    delta: float = 1e-8

    def __post_init__(self):
        for name in ("r", "mu", "sigma"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @classmethod
    def build(cls, grid: TimeGrid, regimes: list, delta: float = 1e-8,
              m: Optional[int] = None, n: Optional[int] = None) -> "MvMarket":
        N = grid.n_nodes
        if m is None:
            m = int(np.asarray(regimes[0]["mu"]).size)
        if n is None:
            n = int(np.asarray(regimes[0]["sigma"]).size) // m
        r, mu, sig = [], [], []
        for i, reg in enumerate(regimes):
            r.append(_table(reg["r"], N, (), f"regime {i} r"))
            mu.append(_table(reg["mu"], N, (m,), f"regime {i} mu"))
            sig.append(_table(reg["sigma"], N, (m, n), f"regime {i} sigma"))
        return cls(np.stack(r, 1), np.stack(mu, 1), np.stack(sig, 1), delta)

    @property
    def b(self) -> np.ndarray:
        return self.mu - self.r[..., None]

    @property
    def ell(self) -> int:
        return self.r.shape[1]

    @property
    def m(self) -> int:
        return self.mu.shape[2]

    @property
    def n(self) -> int:
        return self.sigma.shape[3]

    @property
    def n_nodes(self) -> int:
        return self.r.shape[0]

    def sigma_gram(self) -> np.ndarray:
        return np.einsum("tlmk,tlpk->tlmp", self.sigma, self.sigma)

    def theta_sq(self) -> np.ndarray:
        """b'(sigma sigma')^{-1} b per node and regime."""
        b = self.b
        g = np.linalg.solve(self.sigma_gram(), b[..., None])[..., 0]
        return np.einsum("tli,tli->tl", b, g)

    def is_rate_deterministic(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.r - self.r[:, :1]) <= tol))

    def violations(self) -> List["Violation"]:
        out = []
        N, ell, m, n = self.n_nodes, self.ell, self.m, self.n
        if self.mu.shape != (N, ell, m) or self.sigma.shape != (N, ell, m, n):
            return [Violation(f"inconsistent shapes r {self.r.shape}, mu {self.mu.shape}, "
                              f"sigma {self.sigma.shape}")]
        if m > n:
            out.append(Violation(f"more stocks than noise dimensions (m={m} > n={n})"))
        for name in ("r", "mu", "sigma"):
            if not np.all(np.isfinite(getattr(self, name))):
                out.append(Violation(f"{name} contains non-finite values"))
        if not (self.delta > 0):
            out.append(Violation(f"delta must be positive, got {self.delta}"))
            return out
        lam = np.linalg.eigvalsh(self.sigma_gram())[..., 0]
        for i in range(ell):
            bad = np.nonzero(lam[:, i] < self.delta)[0]
            if bad.size:
                out.append(Violation(f"σσ' not uniformly positive definite, regime {i}",
                                     regime=i, node=int(bad[0])))
        return out


@dataclass(frozen=True)
class ProblemSpec:
    generator: Generator
    grid: TimeGrid
    coefficients: Union[LqCoefficients, MvMarket]
    cone: Cone
    i0: int = 0
    x: float = 1.0

    @property
    def is_mean_variance(self) -> bool:
        return isinstance(self.coefficients, MvMarket)

    @property
    def ell(self) -> int:
        return self.generator.ell

    def lq(self) -> LqCoefficients:
        """General LQ coefficients (mapping a market through the wealth
        equation when needed)."""
        if isinstance(self.coefficients, MvMarket):
            return lq_from_mv(self.coefficients)
        return self.coefficients

    def replace(self, **changes) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class Violation:
    message: str
    regime: Optional[int] = None
    node: Optional[int] = None

    def __str__(self):
        loc = []
        if self.regime is not None:
            loc.append(f"regime={self.regime}")
        if self.node is not None:
            loc.append(f"node={self.node}")
        return self.message + (f" [{', '.join(loc)}]" if loc else "")


def validate(spec: ProblemSpec) -> List[Violation]:
    """Every violated structural invariant of ``spec`` (empty when valid)."""
    out = list(spec.generator.violations())
    coef = spec.coefficients
    out.extend(coef.violations())
    ell = spec.generator.ell
    if coef.ell != ell:
        out.append(Violation(f"coefficients have {coef.ell} regimes, generator has {ell}"))
    if coef.n_nodes != spec.grid.n_nodes:
        out.append(Violation(f"coefficient tables have {coef.n_nodes} nodes, grid has {spec.grid.n_nodes}"))
    if spec.cone.dim != coef.m:
        out.append(Violation(f"cone dimension {spec.cone.dim} does not match control dimension {coef.m}"))
    if not (0 <= spec.i0 < ell):
        out.append(Violation(f"initial regime {spec.i0} outside 0..{ell - 1}"))
    if not math.isfinite(spec.x):
        out.append(Violation(f"initial state {spec.x} is not finite"))
    return out


def lq_from_mv(mv: MvMarket) -> LqCoefficients:
    """Wealth equation as an LQ problem: A = r, B = mu - r 1, C = 0,
    D = sigma', no running cost, terminal weight 1 (singular regularity)."""
    bad = mv.violations()
    if bad:
        raise InvalidMarket("; ".join(str(v) for v in bad))
    N, ell, m, n = mv.n_nodes, mv.ell, mv.m, mv.n
    return LqCoefficients(
        A=mv.r.copy(),
        B=mv.b,
        C=np.zeros((N, ell, n)),
        D=np.swapaxes(mv.sigma, -1, -2).copy(),
        Qcost=np.zeros((N, ell)),
        R=np.zeros((N, ell, m, m)),
        G=np.ones(ell),
        flag=Regularity.SINGULAR,
        delta=min(mv.delta, 1.0),
    )


def _uniformized_expm(q: np.ndarray, t: float, tol: float = 1e-17) -> np.ndarray:
    """exp(q t) for a rate matrix via the Poisson-weighted series of the
    uniformised jump chain."""
    ell = q.shape[0]
    rate = float(np.max(-np.diag(q))) if ell else 0.0
    if rate <= 0.0 or t == 0.0:
        return np.eye(ell)
    lt = rate * t
    if lt > 20.0:
        # square the small-step result to keep the Poisson weights tame
        k = int(math.ceil(math.log2(lt / 20.0)))
        E = _uniformized_expm(q, t / 2 ** k, tol)
        for _ in range(k):
            E = E @ E
        return E
    jump = np.eye(ell) + q / rate
    weight = math.exp(-lt)
    term = np.eye(ell)
    out = weight * term
    tail = 1.0 - weight
    j = 0
    while tail > tol and j < 10_000:
        j += 1
        weight *= lt / j
        term = term @ jump
        out += weight * term
        tail -= weight
    return out


def chain_marginals(gen: Generator, i0: int, grid: TimeGrid) -> np.ndarray:
    """Occupancy probabilities ``p[k, i] = P(alpha_{t_k} = i | alpha_0 = i0)``."""
    ell = gen.ell
    step = _uniformized_expm(gen.q, grid.dt)
    p = np.zeros((grid.n_nodes, ell))
    p[0, i0] = 1.0
    for k in range(grid.n_steps):
        p[k + 1] = p[k] @ step
    p[(p < 0) & (p >= -1e-12)] = 0.0
    return p
