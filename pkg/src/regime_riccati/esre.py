"""Backward integration of the coupled Riccati systems.

With coefficients that are deterministic functions of time and regime the
martingale parts vanish and each system is an l-dimensional ODE.  Writing
``tau = T - t`` the two Riccati systems read

    dP/dtau = (2A + C'C) P + Qcost + H(P) + q_gen P,     P(tau=0) = G,

where ``H`` is the constrained Hamiltonian (PLUS sign for P1, MINUS for
P2).  All systems here are integrated with classical RK4 on the problem
grid; on the step ``[t_k, t_{k+1}]`` the coefficients of node ``k`` apply.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .cone import PD_EPS, Cone, h_min_batch
from .errors import (BoundViolated, DivisionGuard, InvalidMarket, MonotonicityViolated,
                     PositivityLost)
from .market import (Generator, LqCoefficients, MvMarket, ProblemSpec, Regularity, TimeGrid,
                     validate)

LOWER_TOL = 1e-8
UPPER_RTOL = 1e-6


@dataclass(frozen=True)
class EsreSolution:
    """Node tables of P1 and P2 (shape (N, l)) with the cached minimiser
    tables v1, v2 (shape (N, l, m)) of the two Hamiltonians."""

    grid: TimeGrid
    P1: np.ndarray
    P2: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    flag: Regularity
    bound_M: float
    bound_c: float
    spec: ProblemSpec

    @property
    def Lambda1(self) -> np.ndarray:
        return np.zeros(self.P1.shape + (self.spec.lq().n,))

    @property
    def Lambda2(self) -> np.ndarray:
        return self.Lambda1

    def at(self, t: float, i: int) -> Tuple[float, float]:
        k = self.grid.node(t)
        return float(self.P1[k, i]), float(self.P2[k, i])


@dataclass(frozen=True)
class LinearSystemSolution:
    grid: TimeGrid
    values: np.ndarray

    @property
    def eta(self) -> np.ndarray:
        return np.zeros_like(self.values)


def rk4_backward(rhs: Callable[[int, np.ndarray, int], np.ndarray], terminal: np.ndarray,
                 grid: TimeGrid, after_step: Optional[Callable] = None) -> np.ndarray:
    """Integrate ``dY/dtau = rhs(k, Y, stage)`` from ``t = T`` down to ``t = 0``.

    ``rhs`` is evaluated with the coefficients of node ``k`` for the step
    ``[t_k, t_{k+1}]``; ``stage`` is 0 at ``t_{k+1}``, 1 and 2 at the
    midpoint and 3 at ``t_k``.  Returns the node table (N,) + terminal.shape.
    """
    h = grid.dt
    out = np.empty((grid.n_nodes,) + np.shape(terminal))
    y = np.array(terminal, dtype=float)
    out[-1] = y
    for k in range(grid.n_steps - 1, -1, -1):
        k1 = rhs(k, y, 0)
        k2 = rhs(k, y + 0.5 * h * k1, 1)
        k3 = rhs(k, y + 0.5 * h * k2, 2)
        k4 = rhs(k, y + h * k3, 3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k] = y
        if after_step is not None:
            after_step(k, y)
    return out


def a_priori_constant(coef: LqCoefficients, gen: Generator) -> float:
    qmax = float(np.max(np.abs(gen.q))) if gen.q.size else 0.0
    drift = 2.0 * coef.A + np.einsum("tli,tli->tl", coef.C, coef.C)
    c = max(float(np.max(drift)) + qmax, float(np.max(coef.Qcost)), float(np.max(coef.G)), 0.0)
    return c


def a_priori_bound(coef: LqCoefficients, gen: Generator, T: float) -> float:
    """Upper bound ``((c l + 1) e^{c l T} - 1) / l`` on every Riccati value."""
    c = a_priori_constant(coef, gen)
    ell = gen.ell
    try:
        return ((c * ell + 1.0) * math.exp(c * ell * T) - 1.0) / ell
    except OverflowError:
        return math.inf


class _RiccatiRhs:
    """Right-hand side of a stack of S Riccati systems sharing coefficients.

    Row s of the state has its own Hamiltonian sign and coupling matrix.
    """

    def __init__(self, coef: LqCoefficients, cone: Cone, signs, couplings, cap=None):
        self.cone = cone
        self.lin = 2.0 * coef.A + np.einsum("tli,tli->tl", coef.C, coef.C)
        self.DtD = np.einsum("tlkm,tlkp->tlmp", coef.D, coef.D)
        self.Bq = coef.B + np.einsum("tlkm,tlk->tlm", coef.D, coef.C)
        self.Qc = coef.Qcost
        self.R = coef.R
        self.signs = np.asarray(signs, dtype=float)
        self.couplings = np.asarray(couplings, dtype=float)
        self.m = coef.m
        self.cap = cap

    def hamiltonian(self, k: int, Y: np.ndarray):
        S, ell = Y.shape
        m = self.m
        M = Y[:, :, None, None] * self.DtD[k][None] + self.R[k][None]
        q = (Y[:, :, None] * self.Bq[k][None]) * self.signs[:, None, None]
        if m == 1:
            low = M[..., 0, 0]
        else:
            low = np.linalg.eigvalsh(M)[..., 0]
        if np.any(~(low > PD_EPS)):
            s, i = np.argwhere(~(low > PD_EPS))[0]
            raise PositivityLost(
                f"R + P D'D lost positive definiteness at node {k}, regime {i} "
                f"(P = {Y[s, i]:.6g}, smallest eigenvalue {low[s, i]:.3e})")
        vals, v = h_min_batch(M.reshape(S * ell, m, m), q.reshape(S * ell, m), self.cone)
        return vals.reshape(S, ell), v.reshape(S, ell, m)

    def __call__(self, k: int, Y: np.ndarray, stage: int = 0) -> np.ndarray:
        if self.cap is None:
            H, _ = self.hamiltonian(k, Y)
        else:
            H = self._capped(k, Y)
        return self.lin[k] * Y + self.Qc[k] + H + np.einsum("sij,sj->si", self.couplings, Y)

    def _capped(self, k: int, Y: np.ndarray) -> np.ndarray:
        k_cap, samples = self.cap
        S, ell = Y.shape
        own, _ = self.hamiltonian(k, Y)
        best = own.copy()
        for p in samples:
            Hp, _ = self.hamiltonian(k, np.full((S, ell), p))
            best = np.maximum(best, Hp - k_cap * np.abs(Y - p))
        return best


def _minimizer_tables(rhs: _RiccatiRhs, P: np.ndarray):
    # all nodes at once; node k uses its own coefficients
    N, _, ell = P.shape
    m = rhs.m
    M = P[..., None, None] * rhs.DtD[:, None] + rhs.R[:, None]
    q = P[..., None] * rhs.Bq[:, None] * np.array([1.0, -1.0])[None, :, None, None]
    _, v = h_min_batch(M.reshape(-1, m, m), q.reshape(-1, m), rhs.cone)
    v = v.reshape(N, 2, ell, m)
    return np.ascontiguousarray(v[:, 0]), np.ascontiguousarray(v[:, 1])


def _check_bounds(Y, k, lower, upper, names):
    if np.all(Y >= lower) and np.all(Y <= upper):
        return
    bad = np.argwhere((Y < lower) | (Y > upper))[0]
    s, i = int(bad[0]), int(bad[1])
    raise BoundViolated(
        f"{names[s]} = {Y[s, i]:.6g} at node {k}, regime {i} outside [{lower:.3g}, {upper:.6g}]")


def solve_esre(spec: ProblemSpec, *, lipschitz_cap: Optional[float] = None,
               cap_samples: int = 65) -> EsreSolution:
    """Solve both Riccati systems of ``spec`` backward from ``G``.

    ``lipschitz_cap`` replaces the Hamiltonian by its Lipschitz
    regularisation with that constant (STANDARD problems only); it exists to
    observe the monotone approximation and is not a production path.
    """
    bad = validate(spec)
    if bad:
        raise InvalidMarket("; ".join(str(v) for v in bad))
    coef = spec.lq()
    gen, grid, cone = spec.generator, spec.grid, spec.cone
    ell = gen.ell
    bound_M = a_priori_bound(coef, gen, grid.T)
    singular = coef.flag is Regularity.SINGULAR

    signs = [1.0, -1.0]
    couplings = [gen.q, gen.q]
    names = ["P1", "P2"]
    if singular:
        # decoupled lower solutions: generator reduced to its diagonal
        diag = np.diag(np.diag(gen.q))
        signs += [1.0, -1.0]
        couplings += [diag, diag]
        names += ["P1 lower solution", "P2 lower solution"]
    cap = None
    if lipschitz_cap is not None:
        if singular:
            raise ValueError("the Lipschitz-capped Hamiltonian is only available for STANDARD problems")
        top = bound_M if math.isfinite(bound_M) else 10.0 * float(np.max(coef.G) + 1.0)
        cap = (float(lipschitz_cap), np.linspace(0.0, top, cap_samples))
    rhs = _RiccatiRhs(coef, cone, signs, couplings, cap)
    upper = bound_M * (1.0 + UPPER_RTOL)
    terminal = np.tile(coef.G, (len(signs), 1))

    def guard(k, Y):
        _check_bounds(Y, k, -LOWER_TOL, upper, names)

    guard(grid.n_steps, terminal)
    Y = rk4_backward(rhs, terminal, grid, guard)

    bound_c = 0.0
    if singular:
        bound_c = 0.5 * float(np.min(Y[:, 2:]))
        if not bound_c > 0:
            raise BoundViolated(f"singular lower solution is not positive (min {2 * bound_c:.3e})")
        if np.min(Y[:, :2]) < bound_c:
            k, s, i = np.argwhere(Y[:, :2] < bound_c)[0]
            raise BoundViolated(
                f"{names[s]} = {Y[k, s, i]:.6g} at node {k}, regime {i} below the floor {bound_c:.6g}")

    P = Y[:, :2]
    v1, v2 = _minimizer_tables(rhs, P)
    P1 = np.ascontiguousarray(P[:, 0])
    P2 = np.ascontiguousarray(P[:, 1])
    for a in (P1, P2, v1, v2):
        a.setflags(write=False)
    return EsreSolution(grid, P1, P2, v1, v2, coef.flag, bound_M, bound_c, spec)


def solve_psi(gen: Generator, r: np.ndarray, grid: TimeGrid) -> LinearSystemSolution:
    """Backward solve of ``dpsi/dt = -(r psi + q_gen psi)``, ``psi(T) = 1``."""
    r = np.asarray(r, dtype=float)
    q = gen.q

    def rhs(k, y, stage):
        return r[k] * y + q @ y

    vals = rk4_backward(rhs, np.ones(gen.ell), grid)
    return LinearSystemSolution(grid, vals)


def _unconstrained_mv_drift(spec: ProblemSpec):
    mv = spec.coefficients
    if not isinstance(mv, MvMarket):
        raise InvalidMarket("the risk-adjust system needs a mean-variance market")
    return 2.0 * mv.r - mv.theta_sq(), mv.r


def solve_risk_adjust(sol: EsreSolution, spec: Optional[ProblemSpec] = None) -> LinearSystemSolution:
    """Backward solve of the risk-adjust system

        dH_i/dt = r_i H_i - (1/P_i) sum_{j != i} q_ij P_j (H_j - H_i),  H(T) = 1,

    driven by the unconstrained Riccati table ``sol.P1``.  Values of P
    between nodes come from cubic Hermite interpolation with the Riccati
    slopes, which keeps the scheme fourth order.
    """
    spec = sol.spec if spec is None else spec
    grid = sol.grid
    gen = spec.generator
    P = sol.P1
    drift, r = _unconstrained_mv_drift(spec)
    q = gen.q
    ell = gen.ell
    off = q - np.diag(np.diag(q))
    floor = 0.5 * sol.bound_c if sol.bound_c > 0 else 0.0
    # slopes dP/dtau at both ends of each step with that step's coefficients
    left_slope = drift[:-1] * P[:-1] + P[:-1] @ q.T
    right_slope = drift[:-1] * P[1:] + P[1:] @ q.T
    h = grid.dt
    # tau runs backward in t: the step from node k+1 to node k starts at P[k+1]
    P_mid = 0.5 * (P[:-1] + P[1:]) + (h / 8.0) * (right_slope - left_slope)
    for name, arr in (("node", P), ("midpoint", P_mid)):
        if np.any(~(arr > floor)):
            k, i = np.argwhere(~(arr > floor))[0]
            raise DivisionGuard(f"P = {arr[k, i]:.3e} at {name} {k}, regime {i} below {floor:.3e}")

    def rhs_at(k, Pk, y):
        w = off * Pk[None, :]
        return -r[k] * y + (w @ y - w.sum(axis=1) * y) / Pk

    def rhs(k, y, stage):
        Pk = P[k + 1] if stage == 0 else (P_mid[k] if stage < 3 else P[k])
        return rhs_at(k, Pk, y)

    vals = rk4_backward(rhs, np.ones(ell), grid)
    return LinearSystemSolution(grid, vals)


def solve_K(sol: EsreSolution, H: LinearSystemSolution) -> np.ndarray:
    if H.values.shape != sol.P1.shape:
        raise ValueError("P and H tables live on different grids")
    return sol.P1 * H.values


def comparison_probe(spec: ProblemSpec, G_low, G_high, tol: float = 1e-9):
    """Solve with two ordered terminal weights and check the nodewise
    ordering of the solutions."""
    coef = spec.lq()
    G_low = np.broadcast_to(np.asarray(G_low, dtype=float), (coef.ell,))
    G_high = np.broadcast_to(np.asarray(G_high, dtype=float), (coef.ell,))
    if np.any(G_low > G_high):
        raise ValueError("G_low must not exceed G_high")
    low = solve_esre(spec.replace(coefficients=coef.with_terminal(G_low)))
    high = solve_esre(spec.replace(coefficients=coef.with_terminal(G_high)))
    for name in ("P1", "P2"):
        gap = getattr(low, name) - getattr(high, name)
        if np.max(gap) > tol:
            k, i = np.unravel_index(np.argmax(gap), gap.shape)
            raise MonotonicityViolated(
                f"{name}: low solution exceeds high solution by {gap[k, i]:.3e} at node {k}, regime {i}")
    return low, high
