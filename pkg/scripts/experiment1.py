#!/usr/bin/env python3
"""T-junction experiment: all four controllers on paired seeded trials."""

import argparse

from riskbudget.controllers import CONTROLLER_KINDS, IRB
from riskbudget.montecarlo import run_monte_carlo, wilson_interval
from riskbudget.scenarios import exp1_tjunction


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=200)
    parser.add_argument("--seed", type=int, default=1000)
    parser.add_argument("--jobs", type=int, default=2)
    parser.add_argument("--rho0", type=float, default=0.01)
    args = parser.parse_args()

    scenario = exp1_tjunction()
    irb = IRB(rho0=args.rho0, delta=0.0, horizon=scenario.horizon)
    summary, _ = run_monte_carlo(scenario, list(CONTROLLER_KINDS), irb,
                                 args.trials, args.seed, jobs=args.jobs)
    print(f"{'controller':<10} {'collision rate':>16} {'wilson 95%':>18} {'mean cost':>14}")
    for kind, stats in sorted(summary.kinds.items()):
        lo, hi = wilson_interval(stats.collisions, stats.trials)
        print(f"{kind:<10} {stats.collision_rate:>7.4f} +/- {stats.collision_rate_se:.4f}"
              f"   [{lo:.4f}, {hi:.4f}]"
              f" {stats.mean_cost:>9.3f} +/- {stats.mean_cost_se:.3f}")
    print(f"target bound rho0 = {args.rho0}")


if __name__ == "__main__":
    main()
