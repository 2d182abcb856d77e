"""A regime-switching LQ problem with a cone constraint on the control.

The optimal cost x^2 P(0, i0) (for x > 0) is compared with the simulated
cost of the optimal feedback and of a few admissible perturbations of it.
Every perturbation should cost at least as much, up to sampling error.

Run with ``python3 demos/lq_optimality.py``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from regime_riccati import (FeedbackPolicy, SimConfig, load_spec, perturbed_policies,
                            simulate_policies, solve_esre)

SPECS = Path(__file__).parent / "specs"


def main() -> None:
    spec = load_spec(SPECS / "lq_two_regime.toml", n_steps=200)
    sol = solve_esre(spec)
    pol = FeedbackPolicy(sol)
    value = pol.optimal_value(spec.x, spec.i0)
    print(f"P1(0) = {sol.P1[0]}, P2(0) = {sol.P2[0]}")
    print(f"optimal cost from x = {spec.x}: {value:.6f}")

    others = perturbed_policies(pol, 4, np.random.default_rng(0))
    reps = simulate_policies([pol, *others], spec, SimConfig(40_000, master_seed=5))
    print("policy          cost     stderr")
    for name, rep in zip(["optimal"] + [f"perturbed {k}" for k in range(4)], reps):
        print(f"{name:12s} {rep.cost_estimate:9.5f} {rep.cost_stderr:9.5f}")

    rays = load_spec(SPECS / "lq_rays.toml", n_steps=400)
    rs = solve_esre(rays)
    print(f"\ncone spanned by two rays, singular control weight: floor c = {rs.bound_c:.4f}")
    print(f"min P1 = {rs.P1.min():.4f}, min P2 = {rs.P2.min():.4f}")
    print(f"optimal cost from x = {rays.x}: {FeedbackPolicy(rs).optimal_value(rays.x, rays.i0):.6f}")


if __name__ == "__main__":
    main()
