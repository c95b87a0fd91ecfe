#!/usr/bin/env python3
"""Exact policy risks on the two-curve track, including both receding-horizon
adapters, printed as a table against the 0.1 interval bound."""

from riskbudget.discrete import (BudgetedDiscretePolicy, JointChanceDiscretePolicy,
                                 exact_policy_risk, racetrack_greedy_policy,
                                 racetrack_model, sequence_policy)


def main():
    model = racetrack_model()
    rows = [
        ("always slow (70, 70)", sequence_policy([0, 0])),
        ("fast then slow (100, 70)", sequence_policy([1, 0])),
        ("slow then fast (70, 90)", sequence_policy([0, 1])),
        ("greedy receding policy (100, then 90 if safe)", racetrack_greedy_policy),
        ("per-iteration chance constraint 0.1", JointChanceDiscretePolicy(model, 0.1, 2)),
        ("risk budget 0.1", BudgetedDiscretePolicy(model, 0.1, 0.0, 2)),
    ]
    bound = 0.1
    print(f"{'policy':<48} {'exact risk':>10} {'bound':>6} {'ok':>4}")
    for name, policy in rows:
        risk = exact_policy_risk(model, policy)
        print(f"{name:<48} {risk:>10.6f} {bound:>6.2f} {'yes' if risk <= bound + 1e-12 else 'NO':>4}")


if __name__ == "__main__":
    main()
