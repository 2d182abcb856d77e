"""Monte Carlo engine for the controlled state under a feedback policy.

Every simulation unit (one path, or one antithetic pair) owns an
independent counter-based random stream keyed by a 64-bit mix of the
master seed and the unit index.  The stream first drives the exact-jump
regime chain and then the Gaussian increments, so results do not depend
on chunking or on the number of workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numba
import numpy as np

from .control import PolicyBase
from .errors import NumericalBlowup
from .market import Generator, ProblemSpec

MASK64 = (1 << 64) - 1
BLOWUP = 1e12
DUMP_CAP = 1000
CHUNK_UNITS = 8192
_ARRAY_BUDGET = 8_000_000  # Gaussian increments held per chunk
_BLOCK = 8  # chain draws per refill


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def path_seed(master_seed: int, index: int) -> int:
    """64-bit stream key for unit ``index``."""
    return _splitmix64(_splitmix64(master_seed & MASK64) ^ (index & MASK64))


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    dt_sim: Optional[float] = None
    master_seed: int = 42
    antithetic: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError(f"n_paths must be at least 100, got {self.n_paths}")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        if self.dt_sim is not None and not self.dt_sim > 0:
            raise ValueError(f"dt_sim must be positive, got {self.dt_sim}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def substeps(self, solver_dt: float) -> int:
        """Simulation steps per solver step."""
        if self.dt_sim is None:
            return 1
        ratio = solver_dt / self.dt_sim
        sub = int(round(ratio))
        if sub < 1 or abs(sub - ratio) > 1e-9 * ratio:
            raise ValueError(f"dt_sim = {self.dt_sim} does not divide the solver step {solver_dt}")
        return sub


@dataclass(frozen=True)
class SimulationReport:
    """Moments of ``X(T)`` and of the LQ cost with standard errors.

    Standard errors treat an antithetic pair as one sample.  They are zero
    when every path is identical (for instance a deterministic state).
    """

    mean_XT: float
    var_XT: float
    stderr_mean: float
    stderr_var: float
    cost_estimate: float
    cost_stderr: float
    n_paths: int
    dt_sim: float
    XT: np.ndarray
    cost: np.ndarray
    dump: Optional[list] = None


def _chain_path(rng: np.random.Generator, q: np.ndarray, i0: int, times: np.ndarray) -> np.ndarray:
    """Exact jump simulation sampled at ``times``; entry ``j`` is the regime
    in force on ``[t_j, t_{j+1})``."""
    out = np.empty(times.size, dtype=np.int64)
    T = times[-1]
    ell = q.shape[0]
    state, t, j = i0, 0.0, 0
    hold = jump = None
    pos = _BLOCK
    while True:
        rate = -q[state, state]
        if rate > 0:
            if pos == _BLOCK:
                hold = rng.standard_exponential(_BLOCK)
                jump = rng.random(_BLOCK)
                pos = 0
            t_next = t + hold[pos] / rate
        else:
            t_next = math.inf
        stop = int(np.searchsorted(times, t_next, side="left")) if t_next <= T else times.size
        out[j:stop] = state
        j = stop
        if j >= times.size:
            return out
        probs = np.maximum(q[state], 0.0)
        probs[state] = 0.0
        cum = np.cumsum(probs)
        state = int(min(np.searchsorted(cum, jump[pos] * cum[-1], side="right"), ell - 1))
        pos += 1
        t = t_next


def simulate_chain(gen: Generator, i0: int, T: float, dt_sim: float, seed: int) -> np.ndarray:
    """Regime path on the simulation grid ``k dt_sim``; deterministic in ``seed``."""
    n = int(round(T / dt_sim))
    times = np.linspace(0.0, T, n + 1)
    return _chain_path(_rng(seed), gen.q, i0, times)


@numba.njit(cache=True)
def _euler_scalar(x0, regimes, Z, sub, h, ell, A, B, C, D, Qc, R, G, W, V1, V2, S, X_out, cost_out):
    # m = n = 1; coefficient rows are indexed by node * ell + regime
    n_paths, n_sim = regimes.shape[0], Z.shape[1]
    n_pol, nb = W.shape[0], W.shape[1]
    sqh = math.sqrt(h)
    for q in range(n_pol):
        for p in range(n_paths):
            x = x0
            cost = 0.0
            for j in range(n_sim):
                ki = (j // sub) * ell + regimes[p, j]
                u = 0.0
                for b in range(nb):
                    y = x - S[q, b, ki]
                    if y > 0.0:
                        u += W[q, b, 0, 0] * V1[q, b, ki, 0] * y
                    else:
                        u -= W[q, b, 0, 0] * V2[q, b, ki, 0] * y
                cost += (Qc[ki] * x * x + R[ki, 0, 0] * u * u) * h
                x = x + (A[ki] * x + B[ki, 0] * u) * h + (C[ki, 0] * x + D[ki, 0, 0] * u) * Z[p, j, 0] * sqh
                if not abs(x) <= 1e12:
                    return q, p, j
            X_out[q, p] = x
            cost_out[q, p] = cost + G[regimes[p, n_sim]] * x * x
    return -1, -1, -1


@numba.njit(cache=True)
def _euler_general(x0, regimes, Z, sub, h, ell, A, B, C, D, Qc, R, G, W, V1, V2, S, X_out, cost_out):
    n_paths, n_sim, n = regimes.shape[0], Z.shape[1], Z.shape[2]
    m = B.shape[1]
    n_pol, nb = W.shape[0], W.shape[1]
    sqh = math.sqrt(h)
    u = np.empty(m)
    vv = np.empty(m)
    for q in range(n_pol):
        for p in range(n_paths):
            x = x0
            cost = 0.0
            for j in range(n_sim):
                ki = (j // sub) * ell + regimes[p, j]
                for a in range(m):
                    u[a] = 0.0
                for b in range(nb):
                    y = x - S[q, b, ki]
                    if y > 0.0:
                        for a in range(m):
                            vv[a] = V1[q, b, ki, a] * y
                    else:
                        for a in range(m):
                            vv[a] = -V2[q, b, ki, a] * y
                    for a in range(m):
                        acc = 0.0
                        for c in range(m):
                            acc += W[q, b, a, c] * vv[c]
                        u[a] += acc
                uRu = 0.0
                for a in range(m):
                    for c in range(m):
                        uRu += u[a] * R[ki, a, c] * u[c]
                cost += (Qc[ki] * x * x + uRu) * h
                drift = A[ki] * x
                for a in range(m):
                    drift += B[ki, a] * u[a]
                noise = 0.0
                for l in range(n):
                    d = C[ki, l] * x
                    for a in range(m):
                        d += D[ki, l, a] * u[a]
                    noise += d * Z[p, j, l]
                x = x + drift * h + noise * sqh
                if not abs(x) <= 1e12:
                    return q, p, j
            X_out[q, p] = x
            cost_out[q, p] = cost + G[regimes[p, n_sim]] * x * x
    return -1, -1, -1


def _stack_branches(all_branches, rows: int, m: int):
    """Pad the branch lists of several policies to a common length (zero
    weight) and flatten node/regime axes."""
    nb = max(len(br) for br in all_branches)
    P = len(all_branches)
    W = np.zeros((P, nb, m, m))
    V1 = np.zeros((P, nb, rows, m))
    V2 = np.zeros((P, nb, rows, m))
    S = np.zeros((P, nb, rows))
    for q, br in enumerate(all_branches):
        for b, (w, v1, v2, sh) in enumerate(br):
            W[q, b] = w
            V1[q, b] = np.reshape(v1, (rows, m))
            V2[q, b] = np.reshape(v2, (rows, m))
            S[q, b] = np.reshape(sh, rows)
    return W, V1, V2, S


class _Engine:
    def __init__(self, policies: Sequence[PolicyBase], spec: ProblemSpec, sim: SimConfig):
        self.policies = list(policies)
        self.spec = spec
        self.sim = sim
        self.coef = spec.lq()
        grid = spec.grid
        for p in self.policies:
            if p.grid.n_steps != grid.n_steps or p.grid.T != grid.T:
                raise ValueError("policy and problem grids differ")
        self.sub = sim.substeps(grid.dt)
        self.n_sim = grid.n_steps * self.sub
        self.h = grid.T / self.n_sim
        self.times = np.linspace(0.0, grid.T, self.n_sim + 1)
        self.per_unit = 2 if sim.antithetic else 1
        self.n_units = sim.n_paths // self.per_unit
        self.chunk = max(1, min(CHUNK_UNITS, _ARRAY_BUDGET // (self.n_sim * self.coef.n * self.per_unit)))
        c = self.coef
        rows = c.n_nodes * c.ell
        # flattened (node * ell + regime) coefficient rows for the kernels
        self.flat = (np.ascontiguousarray(c.A.reshape(rows)), np.ascontiguousarray(c.B.reshape(rows, c.m)),
                     np.ascontiguousarray(c.C.reshape(rows, c.n)),
                     np.ascontiguousarray(c.D.reshape(rows, c.n, c.m)),
                     np.ascontiguousarray(c.Qcost.reshape(rows)),
                     np.ascontiguousarray(c.R.reshape(rows, c.m, c.m)), np.ascontiguousarray(c.G))
        branches = [p.branches() for p in self.policies]
        self.fast = [i for i, br in enumerate(branches) if br is not None]
        self.slow = [i for i, br in enumerate(branches) if br is None]
        self.tables = (_stack_branches([branches[i] for i in self.fast], rows, c.m)
                       if self.fast else None)
        self.kernel = _euler_scalar if c.m == 1 and c.n == 1 else _euler_general

    def draws(self, lo: int, hi: int):
        q, i0, n = self.spec.generator.q, self.spec.i0, self.coef.n
        size = hi - lo
        regimes = np.empty((size, self.n_sim + 1), dtype=np.int64)
        Z = np.empty((size, self.n_sim, n))
        for r, u in enumerate(range(lo, hi)):
            rng = _rng(path_seed(self.sim.master_seed, u))
            regimes[r] = _chain_path(rng, q, i0, self.times)
            Z[r] = rng.standard_normal((self.n_sim, n))
        if self.per_unit == 2:
            regimes = np.repeat(regimes, 2, axis=0)
            Z = np.stack([Z, -Z], axis=1).reshape(-1, *Z.shape[1:])
        return regimes, Z

    def run_chunk(self, lo: int, hi: int):
        regimes, Z = self.draws(lo, hi)
        first_path = lo * self.per_unit
        out = [None] * len(self.policies)
        if self.fast:
            npaths = regimes.shape[0]
            X = np.empty((len(self.fast), npaths))
            cost = np.empty_like(X)
            q, p, j = self.kernel(float(self.spec.x), regimes, Z, self.sub, self.h, self.coef.ell,
                                  *self.flat, *self.tables, X, cost)
            if q >= 0:
                raise NumericalBlowup(f"|X| exceeded {BLOWUP:g} on path {first_path + p} "
                                      f"at t = {self.times[j + 1]:.6g}")
            for row, idx in enumerate(self.fast):
                out[idx] = (X[row], cost[row])
        for idx in self.slow:
            X, cost, _ = self._generic(self.policies[idx], regimes, Z, first_path, 0)
            out[idx] = (X, cost)
        return out

    def _generic(self, policy, regimes, Z, first_path, n_dump):
        """Vectorised numpy stepping; also records the per-path dump."""
        c = self.coef
        h = self.h
        sqh = math.sqrt(h)
        x = np.full(regimes.shape[0], float(self.spec.x))
        cost = np.zeros_like(x)
        rows = []
        for j in range(self.n_sim):
            k = j // self.sub
            reg = regimes[:, j]
            u = policy.control(k, x, reg)
            rows.extend((first_path + p, self.times[j], int(reg[p]), x[p], *u[p]) for p in range(n_dump))
            R = c.R[k][reg]
            cost += (c.Qcost[k][reg] * x * x + ((u[:, :, None] * R).sum(axis=1) * u).sum(axis=1)) * h
            noise = (c.D[k][reg] * u[:, None, :]).sum(axis=2) + c.C[k][reg] * x[:, None]
            x = x + (c.A[k][reg] * x + (c.B[k][reg] * u).sum(axis=1)) * h \
                + (noise * Z[:, j]).sum(axis=1) * sqh
            bad = ~(np.abs(x) <= BLOWUP)
            if bad.any():
                p = int(np.argmax(bad))
                raise NumericalBlowup(
                    f"|X| exceeded {BLOWUP:g} on path {first_path + p} at t = {self.times[j + 1]:.6g}")
        reg_T = regimes[:, -1]
        rows.extend((first_path + p, self.times[-1], int(reg_T[p]), x[p], *([math.nan] * c.m))
                    for p in range(n_dump))
        cost += c.G[reg_T] * x * x
        return x, cost, rows

    def dump(self, n_paths: int):
        """Per-path rows ``(path_id, t, regime, X, u...)`` for the first
        ``n_paths`` paths of every policy."""
        n_paths = min(n_paths, DUMP_CAP, self.sim.n_paths)
        units = -(-n_paths // self.per_unit)
        regimes, Z = self.draws(0, units)
        # rows come out step-major; the dump is ordered by path, then time
        return [sorted(self._generic(p, regimes, Z, 0, n_paths)[2], key=lambda r: (r[0], r[1]))
                for p in self.policies]

    def run(self, dump_paths: int = 0) -> List[SimulationReport]:
        bounds = [(lo, min(lo + self.chunk, self.n_units))
                  for lo in range(0, self.n_units, self.chunk)]
        if self.sim.workers > 1:
            with ThreadPoolExecutor(self.sim.workers) as ex:
                parts = list(ex.map(lambda b: self.run_chunk(*b), bounds))
        else:
            parts = [self.run_chunk(lo, hi) for lo, hi in bounds]
        dumps = self.dump(dump_paths) if dump_paths > 0 else [None] * len(self.policies)
        out = []
        for idx in range(len(self.policies)):
            XT = np.concatenate([part[idx][0] for part in parts])
            cost = np.concatenate([part[idx][1] for part in parts])
            out.append(_report(XT, cost, self.per_unit, self.h, dumps[idx]))
        return out


def _report(XT, cost, per_unit, h, rows) -> SimulationReport:
    x_u = XT.reshape(-1, per_unit).mean(axis=1)
    x2_u = (XT * XT).reshape(-1, per_unit).mean(axis=1)
    c_u = cost.reshape(-1, per_unit).mean(axis=1)
    U = x_u.size
    m1 = float(x_u.mean())
    cov = np.cov(np.vstack([x_u, x2_u]), ddof=1)
    # delta method for Var = E[X^2] - E[X]^2
    grad = np.array([-2.0 * m1, 1.0])
    se_var = math.sqrt(max(float(grad @ cov @ grad), 0.0) / U)
    se_mean = math.sqrt(max(float(cov[0, 0]), 0.0) / U)
    return SimulationReport(m1, float(XT.var(ddof=1)), se_mean, se_var, float(c_u.mean()),
                            float(c_u.std(ddof=1) / math.sqrt(U)), XT.size, h, XT, cost, rows)


def simulate_policies(policies: Sequence[PolicyBase], spec: ProblemSpec, sim: SimConfig,
                      dump_paths: int = 0) -> List[SimulationReport]:
    """Simulate several policies on common random numbers."""
    return _Engine(policies, spec, sim).run(dump_paths)


def simulate_wealth(policy: PolicyBase, spec: ProblemSpec, sim: SimConfig,
                    dump_paths: int = 0) -> SimulationReport:
    return simulate_policies([policy], spec, sim, dump_paths)[0]


def estimate_cost(policy: PolicyBase, spec: ProblemSpec, sim: SimConfig):
    """``(cost_estimate, stderr)`` of the LQ cost under ``policy``."""
    rep = simulate_wealth(policy, spec, sim)
    return rep.cost_estimate, rep.cost_stderr
