"""Command-line front end.

Exit codes: 0 success, 1 invalid input, 2 infeasible problem, 3 numerical
failure.  Data goes to files and standard output, diagnostics to standard
error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cone import ConeKind
from .control import FeedbackPolicy
from .errors import Infeasible, NumericFailure, RegimeRiccatiError
from .esre import solve_esre
from .io import (load_spec, write_frontier, write_paths, write_policy, write_solution,
                 write_table)
from .market import validate
from .mean_variance import (check_feasibility, mutual_fund,
                            noshort_frontier, reference_return, unconstrained_frontier)
from .simulator import SimConfig, simulate_wealth

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_STEPS = 2000


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


class _Run:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out_dir)
        self.timings = {}
        self.summary = {"P1_0": None, "P2_0": None, "M": None, "rho2": None, "lambda_star": None,
                        "zmin": None, "varmin": None, "feasible": None}

    def timed(self, name, fn, *a, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*a, **kw)
        finally:
            self.timings[name] = time.perf_counter() - t0

    def load(self):
        steps = self.args.grid_steps
        spec = self.timed("load", load_spec, self.args.spec, steps)
        if self.args.x is not None:
            spec = spec.replace(x=float(self.args.x))
        bad = validate(spec)
        if bad:
            for v in bad:
                print(f"invalid: {v}", file=sys.stderr)
            raise _ExitError(EXIT_INVALID)
        return spec

    def finish(self):
        self.summary["timings"] = self.timings
        text = json.dumps(_clean(self.summary), indent=2)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "summary.json").write_text(text + "\n")
        print(text)


class _ExitError(Exception):
    def __init__(self, code):
        self.code = code


def _frontier(run: _Run, spec, z: Optional[float]):
    feas = run.timed("feasibility", check_feasibility, spec)
    run.summary["feasible"] = feas.feasible
    if not feas.feasible:
        raise Infeasible("market is infeasible for targets above the bond")
    if z is None:
        z = reference_return(spec)
    if spec.cone.kind is ConeKind.FULL:
        fr = run.timed("frontier", unconstrained_frontier, spec, z)
        if run.args.z is None and fr.zmin > z:
            # default target: the minimum-variance point when it is admissible
            fr = fr.at(fr.zmin)
        run.summary["M"] = fr.M
    elif spec.cone.kind is ConeKind.ORTHANT:
        fr = run.timed("frontier", noshort_frontier, spec, z)
        run.summary["rho2"] = fr.M
    else:
        raise RegimeRiccatiError("frontiers are available for the full and orthant cones only")
    sol = fr.solution
    run.summary.update(P1_0=sol.P1[0, spec.i0], P2_0=sol.P2[0, spec.i0], lambda_star=fr.lambda_star,
                       zmin=fr.zmin, varmin=fr.varmin, z=fr.z, variance=fr.variance(fr.z),
                       a=fr.a, z0=fr.z0, v0=fr.v0, kind=fr.kind)
    return fr


def cmd_validate(run: _Run) -> int:
    run.load()
    print("OK")
    return EXIT_OK


def cmd_solve(run: _Run) -> int:
    spec = run.load()
    sol = run.timed("solve", solve_esre, spec)
    write_solution(run.out / "P.csv", sol)
    write_policy(run.out / "policy.csv", sol.grid, sol.v1, sol.v2)
    pol = FeedbackPolicy(sol)
    run.summary.update(P1_0=sol.P1[0, spec.i0], P2_0=sol.P2[0, spec.i0],
                       optimal_value=pol.optimal_value(spec.x, spec.i0),
                       bound_M=sol.bound_M, bound_c=sol.bound_c)
    if spec.is_mean_variance:
        feas = run.timed("feasibility", check_feasibility, spec)
        run.summary["feasible"] = feas.feasible
    run.finish()
    return EXIT_OK


def cmd_frontier(run: _Run) -> int:
    spec = run.load()
    fr = _frontier(run, spec, run.args.z)
    write_frontier(run.out / "frontier.csv", fr.table())
    write_policy(run.out / "policy.csv", fr.solution.grid, fr.solution.v1, fr.solution.v2,
                 fr.policy.shift)
    if fr.H is not None:
        write_table(run.out / "H.csv", fr.solution.grid, fr.H.values, "H")
    run.finish()
    return EXIT_OK


def cmd_feasibility(run: _Run) -> int:
    spec = run.load()
    rep = run.timed("feasibility", check_feasibility, spec)
    run.summary.update(feasible=rep.feasible, mass=rep.mass,
                       witness=None if rep.witness is None else list(rep.witness))
    run.finish()
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def cmd_simulate(run: _Run) -> int:
    spec = run.load()
    a = run.args
    sim = SimConfig(a.paths, a.dt_sim, a.seed, a.antithetic, a.workers)
    if spec.is_mean_variance:
        fr = _frontier(run, spec, a.z)
        policy = fr.policy
        target, analytic = fr.z, float(fr.variance(fr.z))
    else:
        sol = run.timed("solve", solve_esre, spec)
        policy = FeedbackPolicy(sol)
        target, analytic = None, None
        run.summary.update(P1_0=sol.P1[0, spec.i0], P2_0=sol.P2[0, spec.i0],
                           optimal_value=policy.optimal_value(spec.x, spec.i0))
    rep = run.timed("simulate", simulate_wealth, policy, spec, sim, a.dump_paths)
    run.summary.update(mean_XT=rep.mean_XT, var_XT=rep.var_XT, stderr_mean=rep.stderr_mean,
                       stderr_var=rep.stderr_var, cost_estimate=rep.cost_estimate,
                       cost_stderr=rep.cost_stderr, n_paths=rep.n_paths, dt_sim=rep.dt_sim)
    if target is not None:
        run.summary.update(target_mean=target, analytic_variance=analytic)
    if rep.dump:
        write_paths(run.out / "paths.csv", rep.dump, spec.lq().m)
    run.finish()
    return EXIT_OK


def cmd_mutual_fund(run: _Run) -> int:
    spec = run.load()
    a = run.args
    if spec.cone.kind is not ConeKind.FULL:
        raise RegimeRiccatiError("mutual-fund separation needs the full cone")
    if a.z is None:
        raise RegimeRiccatiError("mutual-fund needs --z (the second efficient target)")
    fr = _frontier(run, spec, a.z)
    _, ret = mutual_fund(fr, a.z, a.rho)
    z_mix = ret
    run.summary.update(z_star=a.z, rho=a.rho, expected_return=ret, variance=fr.variance(z_mix),
                       lambda_star=fr.multiplier(z_mix))
    mix = fr.policy_for(z_mix)
    write_policy(run.out / "policy.csv", fr.solution.grid, fr.solution.v1, fr.solution.v2, mix.shift)
    run.finish()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regime-riccati", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("spec", help="problem file (TOML)")
        sp.add_argument("--grid-steps", type=int, default=None,
                        help=f"solver steps (default: the file's n_steps, else {DEFAULT_STEPS})")
        sp.add_argument("--out-dir", default=".", help="directory for CSV and summary.json")
        sp.add_argument("--x", type=float, default=None, help="initial state / wealth")
        return sp

    common(sub.add_parser("validate", help="check a problem file"))
    common(sub.add_parser("solve", help="solve the Riccati systems"))
    fr = common(sub.add_parser("frontier", help="mean-variance frontier"))
    fr.add_argument("--z", type=float, default=None, help="target expected terminal wealth")
    common(sub.add_parser("feasibility", help="mean-variance feasibility test"))
    sm = common(sub.add_parser("simulate", help="Monte Carlo check of the optimal policy"))
    sm.add_argument("--z", type=float, default=None)
    sm.add_argument("--paths", type=int, default=100_000)
    sm.add_argument("--seed", type=int, default=42)
    sm.add_argument("--dt-sim", type=float, default=None, help="simulation step (divides the solver step)")
    sm.add_argument("--antithetic", action="store_true")
    sm.add_argument("--workers", type=int, default=1)
    sm.add_argument("--dump-paths", type=int, default=0, help="write the first N paths (at most 1000)")
    mf = common(sub.add_parser("mutual-fund", help="two-fund combination"))
    mf.add_argument("--z", type=float, default=None, help="return of the second efficient portfolio")
    mf.add_argument("--rho", type=float, default=0.5)
    return p


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "frontier": cmd_frontier,
            "feasibility": cmd_feasibility, "simulate": cmd_simulate, "mutual-fund": cmd_mutual_fund}


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if not Path(args.spec).is_file():
        print(f"error: no such file {args.spec}", file=sys.stderr)
        return EXIT_INVALID
    state = _Run(args)
    try:
        return COMMANDS[args.command](state)
    except _ExitError as exc:
        return exc.code
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        state.summary["feasible"] = False
        state.finish()
        return EXIT_INFEASIBLE
    except NumericFailure as exc:
        print(f"numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (RegimeRiccatiError, ValueError) as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
