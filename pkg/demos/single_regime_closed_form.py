"""One regime, one stock: the Riccati solution against its closed form.

With constant coefficients the two Riccati equations coincide and reduce to
a scalar linear ODE, so P(t) = exp((2r - theta^2)(T - t)) with theta the
market price of risk.  The frontier follows from P and the discount factor.

Run with ``python3 demos/single_regime_closed_form.py``.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from regime_riccati import load_spec, solve_esre, unconstrained_frontier

SPEC = Path(__file__).parent / "specs" / "single_regime.toml"


def main() -> None:
    spec = load_spec(SPEC)
    mv = spec.coefficients
    r, b, sigma = mv.r[0, 0], mv.b[0, 0, 0], mv.sigma[0, 0, 0, 0]
    theta2 = (b / sigma) ** 2
    T = spec.grid.T

    sol = solve_esre(spec)
    exact = np.exp((2 * r - theta2) * (T - spec.grid.times))
    print(f"theta^2 = {theta2:.4f}")
    print(f"P(0) solver = {sol.P1[0, 0]:.12f}, exact = {exact[0]:.12f}")
    print(f"max relative error over the grid = {np.max(np.abs(sol.P1[:, 0] / exact - 1)):.2e}")

    # frontier: Var X(T) = e^{-theta^2 T} / (1 - e^{-theta^2 T}) (z - x e^{rT})^2
    fr = unconstrained_frontier(spec, 1.2)
    e = math.exp(-theta2 * T)
    print(f"M = {fr.M:.6f} (closed form {1 - e:.6f})")
    for z in (1.1, 1.2, 1.3):
        closed = e / (1 - e) * (z - spec.x * math.exp(r * T)) ** 2
        print(f"z = {z:.2f}: variance {fr.variance(z):.6f}, closed form {closed:.6f}")

    # feedback is proportional to wealth: u = -(b / sigma^2) X
    pol = fr.policy_for(1.2)
    print(f"stock holding at t=0 for target 1.2: {pol.feedback(0.0, spec.x, 0)[0]:.6f}")


if __name__ == "__main__":
    main()
