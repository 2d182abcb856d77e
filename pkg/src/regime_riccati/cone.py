"""Control constraint cones and the constrained Hamiltonian minimisation.

For a symmetric positive definite ``M`` and a vector ``q`` the two
Hamiltonians are

    H1 = inf_{v in cone} v'Mv + 2 v'q        (sign PLUS)
    H2 = inf_{v in cone} v'Mv - 2 v'q        (sign MINUS)

with ``M = P D'D + R`` and ``q = P B + P D'C + D'Lambda``.  Since
``H2(q) = H1(-q)`` the batched kernel only implements the PLUS form.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionTooLarge, InvalidMarket, NotPositiveDefinite

ORTHANT_MAX_DIM = 16
PD_EPS = 1e-12


class Sign(enum.Enum):
    PLUS = 1
    MINUS = -1


class ConeKind(str, enum.Enum):
    FULL = "full"
    ORTHANT = "orthant"
    RAYS = "rays"


@dataclass(frozen=True)
class Cone:
    """Closed cone in R^m: the whole space, the nonnegative orthant, or a
    finite union of rays ``{s d_k : s >= 0}``.

    Ray directions are normalised on construction.
    """

    kind: ConeKind
    dim: int
    rays: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        kind = ConeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.dim < 1:
            raise InvalidMarket(f"cone dimension must be >= 1, got {self.dim}")
        if kind is ConeKind.RAYS:
            if self.rays is None:
                raise InvalidMarket("RAYS cone needs at least one direction")
            d = np.atleast_2d(np.asarray(self.rays, dtype=float))
            if d.shape[0] == 0 or d.shape[1] != self.dim:
                raise InvalidMarket(
                    f"ray directions must have shape (K, {self.dim}), got {d.shape}")
            norms = np.linalg.norm(d, axis=1)
            if np.any(norms == 0.0):
                raise InvalidMarket("zero ray direction")
            d = d / norms[:, None]
            d.setflags(write=False)
            object.__setattr__(self, "rays", d)
        else:
            object.__setattr__(self, "rays", None)

    @classmethod
    def full(cls, m: int) -> "Cone":
        return cls(ConeKind.FULL, m)

    @classmethod
    def orthant(cls, m: int) -> "Cone":
        return cls(ConeKind.ORTHANT, m)

    @classmethod
    def from_rays(cls, directions: Sequence[Sequence[float]]) -> "Cone":
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        return cls(ConeKind.RAYS, d.shape[1], d)

    @property
    def is_symmetric(self) -> bool:
        """True when ``-v`` is in the cone whenever ``v`` is."""
        if self.kind is ConeKind.FULL:
            return True
        if self.kind is ConeKind.ORTHANT:
            return False
        d = self.rays
        for k in range(d.shape[0]):
            if not np.any(np.all(np.abs(d + d[k]) <= 1e-12, axis=1)):
                return False
        return True

    def contains(self, v, tol: float = 1e-9) -> bool:
        return cone_membership(self, v, tol)


@dataclass(frozen=True)
class HamiltonianInput:
    P: float
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    R: np.ndarray
    Lambda: Optional[np.ndarray] = None

    def matrices(self):
        B = np.atleast_1d(np.asarray(self.B, dtype=float))
        C = np.atleast_1d(np.asarray(self.C, dtype=float))
        D = np.asarray(self.D, dtype=float).reshape(C.size, B.size)
        R = np.asarray(self.R, dtype=float).reshape(B.size, B.size)
        lam = np.zeros(C.size) if self.Lambda is None else np.asarray(self.Lambda, dtype=float)
        M = self.P * D.T @ D + R
        q = self.P * B + self.P * D.T @ C + D.T @ lam
        return M, q


@dataclass(frozen=True)
class HamiltonianResult:
    value: float
    minimizer: np.ndarray


def quadratic_objective(M, q, v, sign: Sign = Sign.PLUS) -> float:
    v = np.asarray(v, dtype=float)
    return float(v @ M @ v + 2.0 * sign.value * (v @ q))


def orthant_qp(M, q):
    """Exact minimiser of ``v'Mv + 2v'q`` over ``v >= 0`` by enumerating
    every candidate support set.

    Returns ``(v, value)``.
    """
    M = np.asarray(M, dtype=float)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    m = q.size
    if m > ORTHANT_MAX_DIM:
        raise DimensionTooLarge(f"orthant enumeration supports m <= {ORTHANT_MAX_DIM}, got {m}")
    v, val = _orthant_single(M, q)
    return v, val


def _orthant_single(M, q):
    m = q.size
    if m == 1:
        s = -q[0] / M[0, 0]
        if s > 0.0:
            return np.array([s]), float(-q[0] * q[0] / M[0, 0])
        return np.zeros(1), 0.0
    best_v = np.zeros(m)
    best_val = 0.0
    for size in range(1, m + 1):
        for support in itertools.combinations(range(m), size):
            idx = list(support)
            vs = np.linalg.solve(M[np.ix_(idx, idx)], -q[idx])
            if np.any(vs < 0.0):
                continue
            v = np.zeros(m)
            v[idx] = vs
            val = float(v @ M @ v + 2.0 * (v @ q))
            if val < best_val:
                best_v, best_val = v, val
    return best_v, best_val


def check_positive_definite(M, where: str = "") -> None:
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 1:
        lam = M[..., 0, 0]
    else:
        lam = np.linalg.eigvalsh(M)[..., 0]
    if np.any(lam <= PD_EPS):
        raise NotPositiveDefinite(
            f"P D'D + R is not positive definite{where} (smallest eigenvalue {np.min(lam):.3e})")


def h_min_batch(M: np.ndarray, q: np.ndarray, cone: Cone):
    """Vectorised PLUS-form Hamiltonian.

    ``M`` has shape (N, m, m), ``q`` shape (N, m).  Returns ``(values,
    minimizers)`` of shapes (N,) and (N, m).  Callers must have checked
    positive definiteness.
    """
    kind = cone.kind
    m = q.shape[1]
    if kind is ConeKind.FULL:
        if m == 1:
            v = -q / M[:, :, 0]
        else:
            v = -np.linalg.solve(M, q[..., None])[..., 0]
        vals = np.einsum("ni,ni->n", v, q)
        return vals, v
    if kind is ConeKind.RAYS:
        d = cone.rays
        dMd = np.einsum("ki,nij,kj->nk", d, M, d)
        dq = q @ d.T
        lam = np.where(dq < 0.0, -dq / dMd, 0.0)
        per_ray = np.where(dq < 0.0, -dq * dq / dMd, 0.0)
        # first index attaining the minimum; ties between a zero value and
        # the apex resolve to the zero vector via lam == 0
        k = np.argmin(per_ray, axis=1)
        rows = np.arange(q.shape[0])
        v = lam[rows, k][:, None] * d[k]
        return per_ray[rows, k], v
    if m == 1:
        s = -q[:, 0] / M[:, 0, 0]
        pos = s > 0.0
        v = np.where(pos, s, 0.0)[:, None]
        vals = np.where(pos, -q[:, 0] * q[:, 0] / M[:, 0, 0], 0.0)
        return vals, v
    if m > ORTHANT_MAX_DIM:
        raise DimensionTooLarge(f"orthant enumeration supports m <= {ORTHANT_MAX_DIM}, got {m}")
    return _orthant_batch(M, q)


def _orthant_batch(M, q):
    # same enumeration as _orthant_single, one batched solve per support
    n, m = q.shape
    best_val = np.zeros(n)
    best_v = np.zeros((n, m))
    for size in range(1, m + 1):
        for support in itertools.combinations(range(m), size):
            idx = list(support)
            sub = M[:, idx][:, :, idx]
            vs = -np.linalg.solve(sub, q[:, idx][..., None])[..., 0]
            ok = np.all(vs >= 0.0, axis=1)
            v = np.zeros((n, m))
            v[:, idx] = vs
            val = np.einsum("ni,nij,nj->n", v, M, v) + 2.0 * np.einsum("ni,ni->n", v, q)
            better = ok & (val < best_val)
            best_val = np.where(better, val, best_val)
            best_v[better] = v[better]
    return best_val, best_v


def h_min(inp: HamiltonianInput, cone: Cone, sign: Sign = Sign.PLUS) -> HamiltonianResult:
    """Constrained Hamiltonian ``inf_{v in cone} v'Mv +/- 2v'q`` and an
    attaining minimiser."""
    M, q = inp.matrices()
    if q.size != cone.dim:
        raise InvalidMarket(f"control dimension {q.size} does not match cone dimension {cone.dim}")
    check_positive_definite(M)
    qs = q if sign is Sign.PLUS else -q
    vals, v = h_min_batch(M[None], qs[None], cone)
    return HamiltonianResult(float(vals[0]), v[0])


def cone_membership(cone: Cone, v, tol: float = 1e-9) -> bool:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if cone.kind is ConeKind.FULL:
        return True
    if cone.kind is ConeKind.ORTHANT:
        return bool(np.all(v >= -tol))
    for d in cone.rays:
        s = float(v @ d)
        if s >= -tol and np.linalg.norm(v - s * d) <= tol:
            return True
    return False


def polar_cone_membership(cone: Cone, y, tol: float = 1e-12) -> bool:
    """Membership in ``{y : x'y <= 0 for all x in cone}``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if cone.kind is ConeKind.FULL:
        return bool(np.all(np.abs(y) <= tol))
    if cone.kind is ConeKind.ORTHANT:
        return bool(np.all(y <= tol))
    return bool(np.all(cone.rays @ y <= tol))
