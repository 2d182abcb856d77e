from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regime_riccati import (Cone, ConeKind, DimensionTooLarge, HamiltonianInput, InvalidMarket,
                            NotPositiveDefinite, Sign, h_min, orthant_qp)
from regime_riccati.cone import cone_membership, polar_cone_membership, quadratic_objective


def raw(M, q):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    m = M.shape[0]
    return HamiltonianInput(P=1.0, B=np.asarray(q, dtype=float), C=np.zeros(m),
                            D=np.zeros((m, m)), R=M)


def test_full_cone_example_from_coefficients():
    inp = HamiltonianInput(P=1.0, B=[0.5], C=[0.0], D=[[1.0]], R=[[0.0]])
    h1 = h_min(inp, Cone.full(1), Sign.PLUS)
    h2 = h_min(inp, Cone.full(1), Sign.MINUS)
    assert h1.value == pytest.approx(-0.25, abs=1e-15)
    assert h1.minimizer == pytest.approx([-0.5], abs=1e-15)
    assert h2.value == h1.value and h2.minimizer == pytest.approx([0.5])


def test_full_cone_closed_form():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    M, q = A @ A.T + np.eye(3), rng.standard_normal(3)
    res = h_min(raw(M, q), Cone.full(3))
    assert res.value == pytest.approx(-q @ np.linalg.solve(M, q), rel=1e-13)
    assert np.allclose(res.minimizer, -np.linalg.solve(M, q))


def test_orthant_nonnegative_q_is_trivial():
    res = h_min(raw(np.eye(2), [0.3, 2.0]), Cone.orthant(2))
    assert res.value == 0.0 and np.all(res.minimizer == 0.0)


def test_single_ray_example():
    M = np.diag([2.0, 1.0, 1.0])
    res = h_min(raw(M, [-3.0, 0.7, -0.2]), Cone.from_rays([[1, 0, 0]]))
    assert res.value == pytest.approx(-4.5)
    assert np.allclose(res.minimizer, [1.5, 0, 0])


def test_two_rays_pick_the_better_ray():
    M = np.array([[2.0, 0.3], [0.3, 1.0]])
    q = np.array([-1.0, -1.2])
    res = h_min(raw(M, q), Cone.from_rays([[1, 0], [0, 1]]))
    per_ray = [-(q[0] ** 2) / M[0, 0], -(q[1] ** 2) / M[1, 1]]
    assert res.value == pytest.approx(min(per_ray))
    # cross-check by 1-D minimisation along each ray
    s = np.linspace(0, 5, 200001)
    brute = min(np.min(s * s * M[k, k] + 2 * s * q[k]) for k in range(2))
    assert res.value == pytest.approx(brute, abs=1e-8)


@pytest.mark.parametrize("M,q,v,val", [
    (np.eye(2), [-1.0, 2.0], [1.0, 0.0], -1.0),
    (np.eye(2), [3.0, 4.0], [0.0, 0.0], 0.0),
    ([[2.0, 1.0], [1.0, 2.0]], [-3.0, 0.0], [1.5, 0.0], -4.5),
])
def test_orthant_qp_examples(M, q, v, val):
    v_star, value = orthant_qp(M, q)
    assert np.allclose(v_star, v) and value == pytest.approx(val)


def test_orthant_qp_dimension_limit():
    with pytest.raises(DimensionTooLarge):
        orthant_qp(np.eye(17), -np.ones(17))


def test_not_positive_definite():
    inp = HamiltonianInput(P=0.0, B=[1.0], C=[0.0], D=[[1.0]], R=[[0.0]])
    with pytest.raises(NotPositiveDefinite):
        h_min(inp, Cone.full(1))


def test_dimension_mismatch():
    with pytest.raises(InvalidMarket):
        h_min(raw(np.eye(2), [1.0, 1.0]), Cone.full(3))


def test_membership_examples():
    assert cone_membership(Cone.orthant(2), [0.0, 0.0])
    rays = Cone.from_rays([[1, 0]])
    assert cone_membership(rays, [2.0, 0.0], 1e-9)
    assert not cone_membership(rays, [1.0, 1.0], 1e-9)
    assert not cone_membership(rays, [-1.0, 0.0], 1e-9)
    assert cone_membership(Cone.full(3), [5.0, -3.0, 1.0])


def test_polar_examples():
    assert polar_cone_membership(Cone.full(2), [0.0, 0.0])
    assert not polar_cone_membership(Cone.full(2), [1e-3, 0.0])
    assert polar_cone_membership(Cone.orthant(2), [-1.0, -2.0])
    assert not polar_cone_membership(Cone.from_rays([[1, 0], [0, 1]]), [-1.0, 0.5])


def test_rays_are_normalised_and_validated():
    c = Cone.from_rays([[3.0, 4.0]])
    assert np.allclose(np.linalg.norm(c.rays, axis=1), 1.0)
    with pytest.raises(InvalidMarket):
        Cone.from_rays([[0.0, 0.0]])
    with pytest.raises(InvalidMarket):
        Cone(ConeKind.RAYS, 2)
    assert Cone.from_rays([[1, 0], [-1, 0]]).is_symmetric
    assert not Cone.orthant(2).is_symmetric and Cone.full(2).is_symmetric


def _cones(m, rng):
    return [Cone.full(m), Cone.orthant(m), Cone.from_rays(rng.standard_normal((3, m)))]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31), st.sampled_from([Sign.PLUS, Sign.MINUS]))
def test_hamiltonian_result_invariants(m, seed, sign):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, m))
    M = A @ A.T + 0.1 * np.eye(m)
    q = rng.standard_normal(m)
    for cone in _cones(m, rng):
        res = h_min(raw(M, q), cone, sign)
        assert res.value <= 0.0
        assert cone_membership(cone, res.minimizer, 1e-9)
        assert quadratic_objective(M, q, res.minimizer, sign) == pytest.approx(res.value, abs=1e-10)
        # no feasible point sampled from the cone does better
        for _ in range(20):
            if cone.kind is ConeKind.FULL:
                v = rng.standard_normal(m)
            elif cone.kind is ConeKind.ORTHANT:
                v = np.abs(rng.standard_normal(m))
            else:
                v = rng.exponential() * cone.rays[rng.integers(len(cone.rays))]
            assert quadratic_objective(M, q, v, sign) >= res.value - 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31))
def test_orthant_kkt(m, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, m))
    M = A @ A.T + 0.1 * np.eye(m)
    q = rng.standard_normal(m)
    v, val = orthant_qp(M, q)
    g = M @ v + q
    for i in range(m):
        if v[i] == 0.0:
            assert g[i] >= -1e-9
        else:
            assert v[i] > 0 and abs(g[i]) <= 1e-9
    assert val == pytest.approx(v @ M @ v + 2 * v @ q, abs=1e-12)
