"""Cone-constrained LQ control and mean-variance portfolio selection with
Markov regime switching.

The usual flow is: build a :class:`ProblemSpec` (or load one with
:func:`load_spec`), solve the Riccati systems with :func:`solve_esre`, then
either wrap the solution in a :class:`FeedbackPolicy` or ask for a
mean-variance frontier.  :func:`simulate_wealth` checks any policy by
Monte Carlo.
"""
from __future__ import annotations

from .cone import Cone, ConeKind, HamiltonianInput, HamiltonianResult, Sign, h_min, orthant_qp
from .control import (CombinedPolicy, FeedbackPolicy, LinearlyPerturbedPolicy, ShiftedPolicy,
                      perturbed_policies)
from .errors import *  # noqa: F401,F403
from .esre import (EsreSolution, LinearSystemSolution, a_priori_bound, comparison_probe,
                   solve_esre, solve_K, solve_psi, solve_risk_adjust)
from .io import load_spec
from .market import (Generator, LqCoefficients, MvMarket, ProblemSpec, Regularity, TimeGrid,
                     chain_marginals, lq_from_mv, validate)
from .mean_variance import (FeasibilityReport, FrontierResult, check_feasibility,
                            minimum_variance_point, mutual_fund, noshort_frontier,
                            reference_return, unconstrained_frontier)
from .simulator import (SimConfig, SimulationReport, estimate_cost, simulate_chain,
                        simulate_policies, simulate_wealth)

__version__ = "0.1.0"
