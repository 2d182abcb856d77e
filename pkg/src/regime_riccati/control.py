"""Optimal feedback laws assembled from a Riccati solution.

Every policy here exposes the same two entry points:

* ``feedback(t, X, i)`` for a single state, with left-node time lookup;
* ``control(k, X, regimes)`` vectorised over paths at solver node ``k``,
  which is what the simulator calls.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cone import Cone, ConeKind, cone_membership
from .errors import InvalidMarket
from .esre import EsreSolution
from .market import TimeGrid


def _split(X):
    X = np.asarray(X, dtype=float)
    return np.maximum(X, 0.0), np.maximum(-X, 0.0)


class PolicyBase:
    grid: TimeGrid
    cone: Cone

    def control(self, k: int, X: np.ndarray, regimes: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def branches(self):
        """Piecewise-linear form ``u = sum_b W_b (V1_b Y_b+ + V2_b Y_b-)`` with
        ``Y_b = X - S_b[k, i]``, as a list of ``(W, V1, V2, S)``; ``None`` when
        the policy has no such form."""
        return None

    def feedback(self, t: float, X: float, i: int) -> np.ndarray:
        k = self.grid.node(t)
        return self.control(k, np.array([float(X)]), np.array([int(i)]))[0]


@dataclass(frozen=True)
class FeedbackPolicy(PolicyBase):
    """``u*(t, X, i) = v1(t, i) X+ + v2(t, i) X-`` from the cached minimiser
    tables of ``solution``."""

    solution: EsreSolution

    @property
    def grid(self) -> TimeGrid:
        return self.solution.grid

    @property
    def cone(self) -> Cone:
        return self.solution.spec.cone

    def control(self, k, X, regimes):
        xp, xm = _split(X)
        v1 = self.solution.v1[k][regimes]
        v2 = self.solution.v2[k][regimes]
        return v1 * xp[:, None] + v2 * xm[:, None]

    def branches(self):
        sol = self.solution
        m = sol.v1.shape[2]
        return [(np.eye(m), sol.v1, sol.v2, np.zeros(sol.P1.shape))]

    def optimal_value(self, x: float, i0: int) -> float:
        xp, xm = max(x, 0.0), max(-x, 0.0)
        P1, P2 = self.solution.P1[0, i0], self.solution.P2[0, i0]
        return float(P1 * xp * xp + P2 * xm * xm)

    def table(self):
        """Rows ``(t, regime, v1..., v2...)`` for every node and regime."""
        sol = self.solution
        times = sol.grid.times
        rows = []
        for k, t in enumerate(times):
            for i in range(sol.v1.shape[1]):
                rows.append((t, i, *sol.v1[k, i], *sol.v2[k, i]))
        return rows


@dataclass(frozen=True)
class ShiftedPolicy(PolicyBase):
    """``base`` applied to ``X - shift[k, i]``; the mean-variance policies
    are of this form with shift proportional to a discount table."""

    base: PolicyBase
    shift: np.ndarray

    @property
    def grid(self):
        return self.base.grid

    @property
    def cone(self):
        return self.base.cone

    def control(self, k, X, regimes):
        return self.base.control(k, np.asarray(X, dtype=float) - self.shift[k][regimes], regimes)

    def branches(self):
        inner = self.base.branches()
        if inner is None:
            return None
        return [(W, V1, V2, S + self.shift) for W, V1, V2, S in inner]


@dataclass(frozen=True)
class CombinedPolicy(PolicyBase):
    """Fixed linear combination ``sum_j w_j pi_j`` of policies on one grid."""

    policies: Sequence[PolicyBase]
    weights: Sequence[float]

    @property
    def grid(self):
        return self.policies[0].grid

    @property
    def cone(self):
        return self.policies[0].cone

    def control(self, k, X, regimes):
        out = 0.0
        for w, p in zip(self.weights, self.policies):
            out = out + w * p.control(k, X, regimes)
        return out

    def branches(self):
        out = []
        for w, p in zip(self.weights, self.policies):
            inner = p.branches()
            if inner is None:
                return None
            out.extend((w * W, V1, V2, S) for W, V1, V2, S in inner)
        return out


@dataclass(frozen=True)
class LinearlyPerturbedPolicy(PolicyBase):
    """``u = K u*`` for a matrix ``K`` that maps the cone into itself.

    For the whole space any matrix qualifies, for the orthant any
    nonnegative matrix, and for a ray cone only positive multiples of the
    identity.
    """

    base: PolicyBase
    K: np.ndarray = field(default=None)

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        m = self.base.cone.dim
        if K.shape != (m, m):
            raise InvalidMarket(f"perturbation matrix must be {m}x{m}, got {K.shape}")
        kind = self.base.cone.kind
        if kind is ConeKind.ORTHANT and np.any(K < 0):
            raise InvalidMarket("orthant perturbations need a nonnegative matrix")
        if kind is ConeKind.RAYS:
            s = K[0, 0]
            if not (s >= 0 and np.allclose(K, s * np.eye(m))):
                raise InvalidMarket("ray-cone perturbations must be nonnegative scalings")
        object.__setattr__(self, "K", K)

    @property
    def grid(self):
        return self.base.grid

    @property
    def cone(self):
        return self.base.cone

    def control(self, k, X, regimes):
        return self.base.control(k, X, regimes) @ self.K.T

    def branches(self):
        inner = self.base.branches()
        if inner is None:
            return None
        return [(self.K @ W, V1, V2, S) for W, V1, V2, S in inner]


def _rotation(m: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    if m == 1:
        return np.eye(1)
    # rotation by ``angle`` in a random plane
    a, b = np.linalg.qr(rng.standard_normal((m, 2)))[0].T
    return (np.eye(m) + (np.cos(angle) - 1.0) * (np.outer(a, a) + np.outer(b, b))
            + np.sin(angle) * (np.outer(b, a) - np.outer(a, b)))


def perturbed_policies(policy: PolicyBase, count: int, rng: np.random.Generator,
                       scale_range=(0.6, 1.4), max_angle: float = 0.5):
    """Admissible perturbations of ``policy``: random scalings, plus random
    rotations for the whole-space cone and nonnegative mixing for the
    orthant."""
    m = policy.cone.dim
    kind = policy.cone.kind
    out = []
    for _ in range(count):
        s = rng.uniform(*scale_range)
        if kind is ConeKind.FULL:
            K = s * _rotation(m, rng.uniform(-max_angle, max_angle), rng)
        elif kind is ConeKind.ORTHANT:
            K = s * np.eye(m) + rng.uniform(0.0, 0.2, (m, m)) * (m > 1)
        else:
            K = s * np.eye(m)
        out.append(LinearlyPerturbedPolicy(policy, K))
    return out


def admissible(policy: PolicyBase, ell: int, X: Sequence[float], tol: float = 1e-9) -> bool:
    """Cone membership of the policy at every node and regime for each
    state in ``X``."""
    X = np.asarray(X, dtype=float)
    for k in range(policy.grid.n_nodes):
        for i in range(ell):
            u = policy.control(k, X, np.full(X.size, i))
            if not all(cone_membership(policy.cone, row, tol) for row in u):
                return False
    return True
