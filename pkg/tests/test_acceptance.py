"""Acceptance criteria.  Each test records a PASS/FAIL line that is printed
in the terminal summary, then asserts."""
from __future__ import annotations

import itertools
import math
import time

import numpy as np
import pytest

from conftest import SPECS, random_lq, random_market, record, single_regime
from regime_riccati import (Cone, ConeKind, FeedbackPolicy, HamiltonianInput, Infeasible,
                            SimConfig, check_feasibility, comparison_probe, h_min, load_spec,
                            mutual_fund, noshort_frontier, perturbed_policies, reference_return,
                            simulate_policies, solve_esre, unconstrained_frontier)
from regime_riccati.mean_variance import _rate_integral_to_T


# ---------------------------------------------------------------- oracles

def orthant_bruteforce(M, q):
    """Minimum of v'Mv + 2v'q over v >= 0 by enumerating all 2^m supports."""
    m = q.size
    best_val, best_v = 0.0, np.zeros(m)
    for size in range(1, m + 1):
        for S in itertools.combinations(range(m), size):
            S = list(S)
            vS = np.linalg.solve(M[np.ix_(S, S)], -q[S])
            if np.all(vS >= 0):
                v = np.zeros(m)
                v[S] = vS
                val = v @ M @ v + 2 * v @ q
                if val < best_val:
                    best_val, best_v = val, v
    return best_val, best_v


def orthant_grid_search(M, q, points=41, levels=6):
    """Zooming grid search on a box that contains the minimiser."""
    m = q.size
    L = 2.0 * np.linalg.norm(q) / np.linalg.eigvalsh(M)[0] + 1e-9
    lo, hi = np.zeros(m), np.full(m, L)
    best = math.inf
    for _ in range(levels):
        axes = [np.linspace(lo[j], hi[j], points) for j in range(m)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
        vals = np.einsum("ni,ij,nj->n", pts, M, pts) + 2 * pts @ q
        j = int(np.argmin(vals))
        best = min(best, float(vals[j]))
        width = 3.0 * (hi - lo) / (points - 1)
        lo, hi = np.maximum(pts[j] - width, 0.0), pts[j] + width
    return best


def rays_closed_form(M, q, rays):
    out = 0.0
    for d in rays:
        d = d / np.linalg.norm(d)
        dq, dMd = d @ q, d @ M @ d
        if dq < 0:
            out = min(out, -dq * dq / dMd)
    return out


def h_of(M, q, cone):
    m = q.size
    inp = HamiltonianInput(P=1.0, B=q, C=np.zeros(m), D=np.zeros((m, m)), R=M)
    return h_min(inp, cone)


def a_priori_oracle(spec):
    c = spec.lq()
    q = spec.generator.q
    drift = 2 * c.A + (c.C ** 2).sum(axis=-1)
    const = max(drift.max() + np.abs(q).max(), c.Qcost.max(), c.G.max(), 0.0)
    ell, T = spec.ell, spec.grid.T
    return ((const * ell + 1) * math.exp(const * ell * T) - 1) / ell


# ---------------------------------------------------------------- criteria

def test_01_single_regime_closed_form():
    spec = single_regime(r=0.05, b=0.1, sigma=0.2, T=1.0, n_steps=2000)
    t0 = time.perf_counter()
    fr = unconstrained_frontier(spec, reference_return(spec))
    elapsed = time.perf_counter() - t0
    theta2 = 0.25
    P_exact = math.exp((2 * 0.05 - theta2) * 1.0)
    M_exact = 1 - math.exp(-theta2)
    err_P = abs(fr.solution.P1[0, 0] - P_exact) / P_exact
    err_M = abs(fr.M - M_exact) / M_exact
    ok = err_P < 1e-8 and err_M < 1e-8 and abs(fr.v0) < 1e-10 and elapsed < 1.0
    record(1, ok, "single-regime closed form",
           f"relerr P(0)={err_P:.2e}, relerr M={err_M:.2e}, v0={fr.v0:.2e}, {elapsed:.2f}s")
    assert ok


def test_02_symmetric_cone_identity():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for j in range(5):
        spec = random_market(rng, ell=2 + j % 2, m=1 + j % 2, n_steps=2000)
        sol = solve_esre(spec)
        worst = max(worst, float(np.max(np.abs(sol.P1 - sol.P2))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 5.0
    record(2, ok, "symmetric cone P1 = P2", f"max|P1-P2|={worst:.2e} over 5 markets, {elapsed:.2f}s")
    assert ok


def test_03_comparison_monotonicity():
    rng = np.random.default_rng(3)
    cones = [Cone.full(2), Cone.orthant(2), Cone.from_rays([[1, 0], [1, 1], [0, -1]]),
             Cone.orthant(1), Cone.full(1)]
    worst = -math.inf
    for j, cone in enumerate(cones):
        spec = random_lq(rng, ell=2 + j % 2, m=cone.dim, cone=cone,
                         flag="singular" if j == 3 else "standard")
        G_low = spec.lq().G
        G_high = G_low + rng.uniform(0.05, 1.0, G_low.size)
        low, high = comparison_probe(spec, G_low, G_high)
        gap = max(np.max(low.P1 - high.P1), np.max(low.P2 - high.P2))
        worst = max(worst, float(gap))
    ok = worst <= 1e-9
    record(3, ok, "comparison monotonicity", f"max(P_low - P_high)={worst:.2e} over 5 specs")
    assert ok


def _bound_suite():
    rng = np.random.default_rng(4)
    specs = []
    for j, kind in enumerate(["full", "orthant", "rays"] * 2):
        m = 1 + j % 2
        cone = (Cone.from_rays(np.eye(m).tolist() + [[-1.0] * m]) if kind == "rays"
                else Cone(ConeKind(kind), m))
        specs.append(random_lq(rng, ell=1 + j % 3, m=m, cone=cone, flag="standard"))
        specs.append(random_lq(rng, ell=1 + (j + 1) % 3, m=m, cone=cone, flag="singular"))
    for j in range(4):
        specs.append(random_market(rng, ell=1 + j % 3, m=1 + j % 2,
                                   cone_kind="orthant" if j % 2 else "full"))
    return specs


def test_04_a_priori_bounds():
    violations, floors = 0, []
    specs = _bound_suite()
    for spec in specs:
        sol = solve_esre(spec)
        bound = a_priori_oracle(spec)
        P = np.stack([sol.P1, sol.P2])
        violations += int(np.sum(P < 0)) + int(np.sum(P > bound))
        violations += int(not math.isclose(sol.bound_M, bound, rel_tol=1e-12))
        if spec.lq().flag.value == "singular":
            violations += int(not sol.bound_c > 0) + int(np.sum(P < sol.bound_c))
            floors.append(sol.bound_c)
    ok = violations == 0
    record(4, ok, "a-priori bounds",
           f"{violations} violations over {len(specs)} solves, smallest floor {min(floors):.3e}")
    assert ok


def test_05_hamiltonian_oracles():
    rng = np.random.default_rng(5)
    err_exact, err_grid, err_rays = 0.0, 0.0, 0.0
    for j in range(100):
        m = 1 + j % 3
        A = rng.standard_normal((m, m))
        M = A @ A.T + 0.3 * np.eye(m)
        q = rng.standard_normal(m)
        res = h_of(M, q, Cone.orthant(m))
        brute, v_brute = orthant_bruteforce(M, q)
        scale = max(1.0, abs(brute))
        err_exact = max(err_exact, abs(res.value - brute) / scale,
                        float(np.max(np.abs(res.minimizer - v_brute))) / max(1.0, np.abs(v_brute).max()))
        err_grid = max(err_grid, abs(res.value - orthant_grid_search(M, q)))
        rays = rng.standard_normal((1 + j % 4, m))
        rres = h_of(M, q, Cone.from_rays(rays))
        rc = rays_closed_form(M, q, rays)
        err_rays = max(err_rays, abs(rres.value - rc) / max(1.0, abs(rc)))
    ok = err_exact <= 1e-12 and err_grid < 1e-4 and err_rays <= 1e-12
    record(5, ok, "Hamiltonian oracles",
           f"brute-force {err_exact:.1e}, grid {err_grid:.1e}, rays {err_rays:.1e} on 100 inputs")
    assert ok


@pytest.mark.slow
def test_06_monte_carlo_lq_optimality():
    t0 = time.perf_counter()
    spec = load_spec(SPECS / "lq_two_regime.toml")
    sol = solve_esre(spec)
    opt = FeedbackPolicy(sol)
    others = perturbed_policies(opt, 20, np.random.default_rng(6))
    reports = simulate_policies([opt] + others, spec, SimConfig(100_000, master_seed=6))
    elapsed = time.perf_counter() - t0
    analytic = opt.optimal_value(spec.x, spec.i0)
    base = reports[0]
    z_opt = (base.cost_estimate - analytic) / base.cost_stderr
    worst = math.inf
    for rep in reports[1:]:
        diff = rep.cost - base.cost
        se = diff.std(ddof=1) / math.sqrt(diff.size)
        worst = min(worst, diff.mean() / se)
    ok = abs(z_opt) <= 3 and worst >= -3 and elapsed < 60
    record(6, ok, "Monte Carlo LQ optimality",
           f"u* cost {base.cost_estimate:.5f} vs {analytic:.5f} ({z_opt:+.2f} SE), "
           f"best perturbed margin {worst:+.2f} SE, {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_07_monte_carlo_frontier():
    t0 = time.perf_counter()
    spec = load_spec(SPECS / "two_regime.toml", n_steps=400)
    base = unconstrained_frontier(spec, reference_return(spec))
    targets = [base.z0 + 0.1, base.z0 + 0.3]
    frs = [base.at(z) for z in targets]
    reports = simulate_policies([f.policy for f in frs], spec, SimConfig(100_000, master_seed=7))
    elapsed = time.perf_counter() - t0
    ok = elapsed < 60
    parts = []
    for z, rep in zip(targets, reports):
        var = float(base.variance(z))
        zm = (rep.mean_XT - z) / rep.stderr_mean
        tol_v = max(3 * rep.stderr_var, 0.01 * var)
        ok &= abs(zm) <= 3 and abs(rep.var_XT - var) <= tol_v
        parts.append(f"z={z:.4f}: mean {zm:+.2f} SE, var {rep.var_XT:.5f} vs {var:.5f} (tol {tol_v:.1e})")
    record(7, ok, "Monte Carlo frontier", "; ".join(parts) + f", {elapsed:.1f}s")
    assert ok


def test_08_noshort_consistency():
    full = single_regime(b=0.1, n_steps=2000)
    ortho = single_regime(b=0.1, n_steps=2000, cone=Cone.orthant(1))
    z = reference_return(full) + 0.2
    fu = unconstrained_frontier(full, z)
    ns = noshort_frontier(ortho, z)
    rel = max(abs(u - v) / max(abs(u), 1e-300) if u else abs(v)
              for u, v in [(fu.a, ns.a), (fu.z0, ns.z0), (fu.lambda_star, ns.lambda_star)])
    rel = max(rel, abs(fu.v0 - ns.v0))
    bad = single_regime(b=-0.1, n_steps=2000, cone=Cone.orthant(1))
    report = check_feasibility(bad)
    with pytest.raises(Infeasible):
        noshort_frontier(bad, z)
    ok = rel < 1e-8 and not report.feasible
    record(8, ok, "no-short consistency",
           f"max rel diff (a, z0, v0, lambda*)={rel:.1e}; b<0 mass={report.mass:g} -> infeasible")
    assert ok


def test_09_invariant_suite():
    rng = np.random.default_rng(9)
    failures, checks = [], 0
    for j in range(8):
        spec = random_market(rng, ell=1 + j % 3, m=1 + j % 2, common_rate=j % 2 == 0)
        ref = reference_return(spec)
        fr = unconstrained_frontier(spec, ref)
        P0 = fr.solution.P1[0, spec.i0]
        H = fr.H.values
        H0 = H[0, spec.i0]
        conds = {"0<M<1": 0 < fr.M < 1, "1-M >= P H^2": 1 - fr.M >= P0 * H0 ** 2 - 1e-12,
                 "0<=H<=1": bool(np.all((H >= 0) & (H <= 1 + 1e-14)))}
        if spec.coefficients.is_rate_deterministic():
            # the multiplier bound refers to the deterministic bond growth
            for dz in (0.0, 0.05, 0.5):
                conds[f"lambda*(ref+{dz})"] = fr.multiplier(ref + dz) >= ref - (ref + dz) - 1e-12
            R = _rate_integral_to_T(spec.coefficients.r[:, 0], spec.grid.dt)[0]
            conds["rho2<1"] = fr.solution.P2[0, spec.i0] * math.exp(-2 * R) < 1
        failures += [f"full#{j}:{k}" for k, v in conds.items() if not v]
        checks += len(conds)
    for j in range(4):
        spec = random_market(rng, ell=1 + j % 3, m=1 + j % 2, common_rate=True, cone_kind="orthant")
        if not check_feasibility(spec).feasible:
            continue
        ref = reference_return(spec)
        fr = noshort_frontier(spec, ref)
        conds = {"rho2<1": fr.rho2 < 1}
        for dz in (0.0, 0.05, 0.5):
            conds[f"lambda*(ref+{dz})"] = fr.multiplier(ref + dz) >= ref - (ref + dz) - 1e-12
        failures += [f"orthant#{j}:{k}" for k, v in conds.items() if not v]
        checks += len(conds)
    ok = not failures
    record(9, ok, "invariant suite", f"{len(failures)} violations in {checks} checks {failures[:3]}")
    assert ok


def _smooth_lq(n_steps):
    from regime_riccati import Generator, LqCoefficients, ProblemSpec, TimeGrid

    grid = TimeGrid(1.0, n_steps)
    regimes = [dict(A=0.4, B=[1.0], C=[0.5], D=[[0.8]], Q=1.0, R=[[0.5]], G=1.5),
               dict(A=-0.3, B=[0.6], C=[0.2], D=[[1.2]], Q=0.2, R=[[1.0]], G=0.5)]
    coef = LqCoefficients.build(grid, regimes, delta=0.5)
    return ProblemSpec(Generator([[-3.0, 3.0], [1.5, -1.5]]), grid, coef, Cone.full(1))


def test_10_convergence_orders():
    vals = [solve_esre(_smooth_lq(n)).P1[0] for n in (8, 16, 32, 64)]
    d = [np.max(np.abs(a - b)) for a, b in zip(vals, vals[1:])]
    orders = [math.log2(a / b) for a, b in zip(d, d[1:])]
    rk_ok = min(orders) >= 3.5

    spec = load_spec(SPECS / "two_regime.toml", n_steps=50)
    fr = unconstrained_frontier(spec, reference_return(spec)).at(1.2)
    dt = spec.grid.dt
    coarse, fine = (simulate_policies([fr.policy], spec, SimConfig(40_000, dt_sim=h, master_seed=10))[0]
                    for h in (dt, dt / 2))
    shift = abs(coarse.mean_XT - fine.mean_XT)
    se = math.hypot(coarse.stderr_mean, fine.stderr_mean)
    tol = max(3 * se, 2 * coarse.dt_sim * abs(fr.z))
    ok = rk_ok and shift < tol
    record(10, ok, "convergence orders",
           f"RK4 observed orders {', '.join(f'{o:.2f}' for o in orders)}; "
           f"EM mean shift {shift:.2e} < {tol:.2e}")
    assert ok


def test_11_mutual_fund_affinity():
    spec = load_spec(SPECS / "two_regime.toml")
    fr = unconstrained_frontier(spec, reference_return(spec))
    z_star = fr.z0 + 0.4
    combined, ret = mutual_fund(fr, z_star, 0.5)
    target = fr.policy_for(ret)
    X = np.linspace(-2.0, 3.0, 11)
    worst = 0.0
    for k in range(spec.grid.n_nodes):
        for i in range(spec.ell):
            reg = np.full(X.size, i)
            worst = max(worst, float(np.max(np.abs(combined.control(k, X, reg) - target.control(k, X, reg)))))
    ok = worst < 1e-10 and math.isclose(ret, 0.5 * (fr.z0 + z_star), rel_tol=1e-15)
    record(11, ok, "mutual-fund affinity", f"max nodewise |u_mix - u_mid|={worst:.1e}")
    assert ok
