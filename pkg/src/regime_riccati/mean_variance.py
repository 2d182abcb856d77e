"""Mean-variance portfolio selection on a regime-switching market.

Chain expectations (the slope constant ``M``, the feasibility mass) are
deterministic quadratures against the occupancy probabilities; Monte Carlo
is only used to cross-check them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import simpson

from .cone import Cone, ConeKind
from .control import CombinedPolicy, FeedbackPolicy, PolicyBase, ShiftedPolicy
from .errors import (BelowThreshold, DegenerateDiscount, DegenerateM, Infeasible,
                     InterestNotDeterministic, InvalidMarket, InvalidTarget)
from .esre import EsreSolution, LinearSystemSolution, solve_esre, solve_psi, solve_risk_adjust
from .market import MvMarket, ProblemSpec, chain_marginals, validate

M_EPS = 1e-12
THRESHOLD_RTOL = 1e-9
RATE_TOL = 1e-14


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    mass: float
    witness: Optional[Tuple[float, int]] = None


def _market(spec: ProblemSpec) -> MvMarket:
    if not spec.is_mean_variance:
        raise InvalidMarket("a mean-variance market is required")
    bad = validate(spec)
    if bad:
        raise InvalidMarket("; ".join(str(v) for v in bad))
    return spec.coefficients


def _outside_polar(cone: Cone, y: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Vectorised complement of polar-cone membership; ``y`` is (..., m)."""
    if cone.kind is ConeKind.FULL:
        return np.any(np.abs(y) > tol, axis=-1)
    if cone.kind is ConeKind.ORTHANT:
        return np.any(y > tol, axis=-1)
    return np.any(y @ cone.rays.T > tol, axis=-1)


def check_feasibility(spec: ProblemSpec) -> FeasibilityReport:
    """Mass of time and regime where the discounted excess return leaves
    the polar cone; the target problem is feasible iff it is positive."""
    mv = _market(spec)
    grid = spec.grid
    psi = solve_psi(spec.generator, mv.r, grid).values
    p = chain_marginals(spec.generator, spec.i0, grid)
    ind = _outside_polar(spec.cone, psi[..., None] * mv.b)
    weight = p * ind
    mass = float(np.trapezoid(weight.sum(axis=1), grid.times))
    witness = None
    hits = np.argwhere(weight > 0)
    if hits.size:
        k, i = hits[0]
        witness = (float(grid.times[k]), int(i))
    return FeasibilityReport(mass > 0.0, mass, witness)


@dataclass(frozen=True)
class FrontierResult:
    """Efficient frontier ``Var = a (z - z0)^2 + v0`` together with the
    multiplier and the optimal policy for the requested target ``z``.

    ``M`` holds the slope constant in the unconstrained case and the
    discount ratio ``rho2`` in the no-short case.
    """

    kind: str
    M: float
    lambda_star: float
    a: float
    z0: float
    v0: float
    z: float
    x: float
    i0: int
    policy: PolicyBase
    solution: EsreSolution
    discount: np.ndarray
    lam_slope: float
    lam_offset: float
    K0: float = math.nan
    H: Optional[LinearSystemSolution] = None

    @property
    def rho2(self) -> float:
        return self.M if self.kind == "noshort" else math.nan

    @property
    def zmin(self) -> float:
        return self.z0

    @property
    def varmin(self) -> float:
        return self.v0

    def variance(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.a * (z - self.z0) ** 2 + self.v0

    def multiplier(self, z: float) -> float:
        return self.lam_slope * z + self.lam_offset

    def at(self, z: float) -> "FrontierResult":
        """The same frontier with target, multiplier and policy moved to ``z``."""
        return replace(self, z=float(z), lambda_star=self.multiplier(z), policy=self.policy_for(z))

    def policy_for(self, z: float) -> PolicyBase:
        """Optimal policy for target ``z`` on the same market."""
        level = z + self.multiplier(z)
        return ShiftedPolicy(FeedbackPolicy(self.solution), level * self.discount)

    def table(self, n: int = 41):
        """Rows ``(z, variance, std_dev, lambda_star)`` sampling the frontier
        from ``z0`` over four standard deviations of a reference scale."""
        ref = self.x * self.x if self.x != 0 else 1.0
        span = 4.0 * math.sqrt(self.v0 + ref / self.a)
        zs = np.linspace(self.z0, self.z0 + span, n)
        var = self.variance(zs)
        return [(float(z), float(v), float(math.sqrt(max(v, 0.0))), self.multiplier(float(z)))
                for z, v in zip(zs, var)]


def _clip_small_negative(v0: float, scale: float) -> float:
    if v0 < 0.0:
        if v0 < -1e-9 * max(scale, 1.0):
            raise DegenerateM(f"frontier offset v0 = {v0:.3e} is negative")
        return 0.0
    return v0


def reference_return(spec: ProblemSpec, x: Optional[float] = None) -> float:
    """Expected terminal wealth of the all-bond strategy, ``x E exp(int r)``.

    With regime-dependent rates the expectation is the Feynman-Kac value
    ``psi(0, i0)`` of the linear backward system.
    """
    mv = _market(spec)
    x = spec.x if x is None else float(x)
    if mv.is_rate_deterministic(RATE_TOL):
        R = float(_rate_integral_to_T(mv.r[:, 0], spec.grid.dt)[0])
        return x * math.exp(R)
    return float(solve_psi(spec.generator, mv.r, spec.grid).values[0, spec.i0]) * x


def unconstrained_frontier(spec: ProblemSpec, z: float, x: Optional[float] = None) -> FrontierResult:
    """Frontier, multiplier and optimal policy with no trading constraint."""
    mv = _market(spec)
    if spec.cone.kind is not ConeKind.FULL:
        raise InvalidMarket("the unconstrained frontier needs the FULL cone")
    x = spec.x if x is None else float(x)
    spec = spec.replace(x=x)
    i0 = spec.i0
    feas = check_feasibility(spec)
    if not feas.feasible:
        raise Infeasible("excess returns never leave the polar cone: no target above the bond is reachable")
    threshold = reference_return(spec, x)
    if z < threshold - THRESHOLD_RTOL * (abs(threshold) + 1.0):
        raise BelowThreshold(f"target z = {z} is below the riskless reference {threshold:.12g}")
    fr = _unconstrained(spec, mv, x)
    return fr.at(z)


def _unconstrained(spec: ProblemSpec, mv: MvMarket, x: float) -> FrontierResult:
    i0 = spec.i0
    grid = spec.grid
    sol = solve_esre(spec)
    H = solve_risk_adjust(sol, spec)
    P = sol.P1
    K = P * H.values
    O = K * K * mv.theta_sq() / P
    p = chain_marginals(spec.generator, i0, grid)
    M = float(simpson((p * O).sum(axis=1), x=grid.times))
    if not (M_EPS < M < 1.0 - M_EPS):
        raise DegenerateM(f"slope constant M = {M:.6g} outside (0, 1)")
    P0, K0 = float(P[0, i0]), float(K[0, i0])
    a = (1.0 - M) / M
    z0 = K0 * x / (1.0 - M)
    v0 = _clip_small_negative((P0 - K0 * K0 / (1.0 - M)) * x * x, P0 * x * x)
    # lambda*(z) = ((1 - M) z - K0 x) / M
    slope, offset = (1.0 - M) / M, -K0 * x / M
    return FrontierResult("unconstrained", M, math.nan, a, z0, v0, math.nan, x, i0,
                          None, sol, H.values, slope, offset, K0, H)


def minimum_variance_point(fr: FrontierResult):
    """``(varmin, zmin, policy)``; at ``zmin`` the multiplier vanishes."""
    return fr.varmin, fr.zmin, fr.policy_for(fr.zmin)


def _rate_integral_to_T(r: np.ndarray, dt: float) -> np.ndarray:
    # r piecewise constant on each step, so the integral is a reversed cumsum
    return np.concatenate([np.cumsum((r[:-1] * dt)[::-1])[::-1], [0.0]])


def noshort_frontier(spec: ProblemSpec, z: float, x: Optional[float] = None) -> FrontierResult:
    """Frontier and policy when short selling is forbidden (orthant cone);
    the bond rate must not depend on the regime."""
    mv = _market(spec)
    if spec.cone.kind is not ConeKind.ORTHANT:
        raise InvalidMarket("the no-short frontier needs the ORTHANT cone")
    if not mv.is_rate_deterministic(RATE_TOL):
        raise InterestNotDeterministic("the bond rate differs across regimes")
    x = spec.x if x is None else float(x)
    spec = spec.replace(x=x)
    i0 = spec.i0
    feas = check_feasibility(spec)
    if not feas.feasible:
        raise Infeasible("no stock ever has a positive excess return with positive probability")
    integral = _rate_integral_to_T(mv.r[:, 0], spec.grid.dt)
    R = float(integral[0])
    threshold = x * math.exp(R)
    if z < threshold - THRESHOLD_RTOL * (abs(threshold) + 1.0):
        raise BelowThreshold(f"target z = {z} is below the riskless reference {threshold:.12g}")
    sol = solve_esre(spec)
    P2 = float(sol.P2[0, i0])
    rho2 = P2 * math.exp(-2.0 * R)
    if not rho2 < 1.0:
        raise DegenerateDiscount(f"discount ratio rho2 = {rho2:.12g} is not below 1")
    a = rho2 / (1.0 - rho2)
    z0 = threshold
    # lambda*(z) = P2 e^{-R} (z e^{-R} - x) / (1 - rho2)
    c = P2 * math.exp(-R) / (1.0 - rho2)
    slope, offset = c * math.exp(-R), -c * x
    disc = np.broadcast_to(np.exp(-integral)[:, None], sol.P1.shape).copy()
    fr = FrontierResult("noshort", rho2, math.nan, a, z0, 0.0, math.nan, x, i0,
                        None, sol, disc, slope, offset)
    return fr.at(z)


def mutual_fund(fr: FrontierResult, z_star: float, rho: float):
    """Mix the minimum-variance policy with the efficient policy for
    ``z_star``: returns ``(policy, expected_return)``."""
    if fr.kind != "unconstrained":
        raise InvalidMarket("mutual-fund separation is stated for the unconstrained frontier")
    if not z_star > fr.zmin:
        raise InvalidTarget(f"z_star = {z_star} must exceed the minimum-variance return {fr.zmin:.12g}")
    if not rho >= 0.0:
        raise InvalidTarget(f"rho must be nonnegative, got {rho}")
    _, zmin, pmin = minimum_variance_point(fr)
    policy = CombinedPolicy((pmin, fr.policy_for(z_star)), (1.0 - rho, rho))
    return policy, (1.0 - rho) * zmin + rho * z_star
