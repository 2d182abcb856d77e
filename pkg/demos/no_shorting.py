"""Mean-variance selection when short sales are forbidden.

First a market where every stock earns less than the bond: no admissible
portfolio beats the bond, so no target above the bond return is feasible.
Then a two-regime market with positive excess returns, where the
constrained frontier is compared with the unconstrained one.

Run with ``python3 demos/no_shorting.py``.
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from regime_riccati import (Cone, check_feasibility, load_spec, noshort_frontier,
                            reference_return, unconstrained_frontier)

SPECS = Path(__file__).parent / "specs"


def main() -> None:
    bad = load_spec(SPECS / "noshort_negative_b.toml", n_steps=200)
    rep = check_feasibility(bad)
    print(f"stock below the bond: feasible = {rep.feasible}, mass = {rep.mass:.3e}")

    spec = load_spec(SPECS / "noshort_two_regime.toml", n_steps=1000)
    bond = reference_return(spec)
    print(f"\nbond return {bond:.6f}")
    ns = noshort_frontier(spec, bond + 0.1)
    full = unconstrained_frontier(replace(spec, cone=Cone.full(spec.coefficients.m)), bond + 0.1)
    print(f"frontier slopes: no shorting {ns.a:.6f}, unconstrained {full.a:.6f}")
    print("   target  var(no short)  var(free)")
    for dz in (0.0, 0.05, 0.1, 0.2):
        z = bond + dz
        print(f"{z:9.4f} {ns.variance(z):14.6f} {full.variance(z):10.6f}")

    pol = ns.policy_for(bond + 0.1)
    for x in (0.5, 1.0, 1.5):
        print(f"holdings at t=0, wealth {x:.1f}, regime 0: {pol.feedback(0.0, x, 0)}")


if __name__ == "__main__":
    main()
