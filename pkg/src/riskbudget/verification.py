"""Self-contained oracle checks behind the `verify` command.

Each check recomputes a property against an independent reference (exact
enumeration, Monte Carlo estimation, or golden values) and reports pass/fail
with a one-line detail. The disk-bound check takes the bound function as a
parameter so a corrupted implementation can be shown to fail it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .discrete import (BudgetedDiscretePolicy, JointChanceDiscretePolicy,
                       exact_policy_profile, exact_policy_risk, racetrack_model,
                       racetrack_greedy_policy, random_model, sequence_policy,
                       umdp_transform_check)
from .risk import disk_collision_bound


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_racetrack() -> CheckResult:
    """Golden two-curve values: greedy risk 0.19, cautious 0, adapters match."""
    model = racetrack_model()
    greedy = exact_policy_risk(model, racetrack_greedy_policy)
    cautious = exact_policy_risk(model, sequence_policy([0, 0]))
    jcc = exact_policy_risk(model, JointChanceDiscretePolicy(model, 0.1, 2))
    budgeted = exact_policy_risk(model, BudgetedDiscretePolicy(model, 0.1, 0.0, 2))
    ok = (abs(greedy - 0.19) < 1e-12 and cautious == 0.0
          and abs(jcc - 0.19) < 1e-12 and budgeted <= 0.1 + 1e-12)
    return CheckResult(
        "racetrack golden values", ok,
        f"greedy/receding policy risk {greedy:.6f} vs interval bound 0.1; "
        f"budgeted policy risk {budgeted:.6f} <= 0.1; cautious {cautious:.1f}",
    )


def check_boole_dominance(n_models: int = 20, seed: int = 1234) -> CheckResult:
    """Per-step collision masses must dominate the exact joint risk."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_models):
        model, rho0, delta, n = random_model(rng)
        policies = [BudgetedDiscretePolicy(model, rho0, delta, n)]
        for u in range(model.n_controls):
            policies.append(sequence_policy([u] * model.horizon))
        for policy in policies:
            profile = exact_policy_profile(model, policy)
            slack_entry = profile.entry_masses.sum() - profile.exact_risk
            slack_occ = profile.occupancy.sum() - profile.exact_risk
            worst = max(worst, -min(slack_entry, slack_occ))
        for u in range(model.n_controls):
            bound, exact = umdp_transform_check(model, [u] * model.horizon)
            worst = max(worst, exact - bound)
    ok = worst <= 1e-12
    return CheckResult(
        "per-step mass dominance", ok,
        f"max (exact - summed mass) = {worst:.3e} over {n_models} random models",
    )


def check_disk_bound_mc(
    n_instances: int = 20,
    n_samples: int = 1_000_000,
    seed: int = 99,
    bound_fn: Callable = disk_collision_bound,
) -> CheckResult:
    """Analytic bound vs Monte Carlo overlap estimate on random disk pairs."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_instances):
        mu1 = rng.uniform(-2.0, 2.0, size=2)
        mu2 = mu1 + rng.uniform(1.0, 8.0) * _unit(rng)
        cov1 = _random_cov(rng)
        cov2 = _random_cov(rng)
        r1, r2 = rng.uniform(0.3, 1.5, size=2)
        analytic = bound_fn(mu1, cov1, r1, mu2, cov2, r2)
        c1 = rng.multivariate_normal(mu1, cov1, size=n_samples)
        c2 = rng.multivariate_normal(mu2, cov2, size=n_samples)
        hits = np.hypot(*(c1 - c2).T) <= r1 + r2
        p_hat = hits.mean()
        se = np.sqrt(max(p_hat * (1 - p_hat), 1e-12) / n_samples) if p_hat > 0 else 0.0
        worst = max(worst, (p_hat - 3.0 * se) - analytic)
    ok = worst <= 0.0
    return CheckResult(
        "disk bound soundness (Monte Carlo)", ok,
        f"max (estimate - 3se - bound) = {worst:.3e} over {n_instances} instances "
        f"at {n_samples} samples",
    )


def _unit(rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(0, 2 * np.pi)
    return np.array([np.cos(theta), np.sin(theta)])


def _random_cov(rng: np.random.Generator) -> np.ndarray:
    a = rng.uniform(-1.0, 1.0, size=(2, 2))
    return a @ a.T + 0.05 * np.eye(2)


def run_all_checks() -> list[CheckResult]:
    return [
        check_racetrack(),
        check_boole_dominance(),
        check_disk_bound_mc(),
    ]
