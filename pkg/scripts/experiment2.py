#!/usr/bin/env python3
"""Head-on yard-lane experiment: budgeted planner vs baselines, paired cost
comparison."""

import argparse

import numpy as np

from riskbudget.controllers import CONTROLLER_KINDS, IRB
from riskbudget.montecarlo import paired_mean_upper_bound, run_monte_carlo
from riskbudget.scenarios import exp2_three_vehicle


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=200)
    parser.add_argument("--seed", type=int, default=2000)
    parser.add_argument("--jobs", type=int, default=2)
    parser.add_argument("--rho0", type=float, default=0.01)
    parser.add_argument("--delta", type=float, default=4e-4)
    args = parser.parse_args()

    scenario = exp2_three_vehicle()
    irb = IRB(rho0=args.rho0, delta=args.delta, horizon=scenario.horizon)
    summary, results = run_monte_carlo(scenario, list(CONTROLLER_KINDS), irb,
                                       args.trials, args.seed, jobs=args.jobs)
    for kind, stats in sorted(summary.kinds.items()):
        print(f"{kind:<10} collision rate {stats.collision_rate:.4f}, "
              f"mean cost {stats.mean_cost:.3f} +/- {stats.mean_cost_se:.3f}")

    costs = {}
    for kind in ("rb-rhc", "jcc-rhc"):
        costs[kind] = np.array([r.cost for r in results if r.kind == kind and r.error is None])
    diffs = costs["rb-rhc"] - costs["jcc-rhc"]
    upper = paired_mean_upper_bound(diffs)
    print(f"paired mean cost difference (rb-rhc - jcc-rhc): {diffs.mean():+.3f}, "
          f"one-sided 95% upper bound {upper:+.3f}")


if __name__ == "__main__":
    main()
