"""Seeded Monte Carlo harness with paired trials across controllers.

Every trial seed draws one ground-truth world, and each requested controller
runs an episode against that same world, so cross-controller comparisons are
paired. Trials are independent and may run across processes; results are
reduced in seed order either way, keeping summaries bit-identical for a given
(scenario, kinds, bound, trial count, base seed).
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .controllers import IRB, EpisodeTrace, run_episode
from .errors import ConfigError
from .scenarios import Scenario, sample_ground_truth

Z_95 = 1.959963984540054

GUARANTEE = "guarantee"
MODEL_MISMATCH = "model-mismatch"
MISMATCH_NOISE_SCALE = 2.0


@dataclass
class TrialResult:
    seed: int
    kind: str
    collided: bool
    cost: float
    steps: int
    reached_goal: bool
    budget_trace: np.ndarray
    planned_risk_trace: np.ndarray
    min_distance_trace: np.ndarray
    error: str | None = None


@dataclass
class KindSummary:
    kind: str
    trials: int
    collisions: int
    collision_rate: float
    collision_rate_se: float
    mean_cost: float
    mean_cost_se: float
    errors: int

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "trials": self.trials,
            "collisions": self.collisions,
            "collision_rate": self.collision_rate,
            "collision_rate_se": self.collision_rate_se,
            "mean_cost": self.mean_cost,
            "mean_cost_se": self.mean_cost_se,
            "errors": self.errors,
        }


@dataclass
class MonteCarloSummary:
    scenario: str
    mode: str
    trials: int
    base_seed: int
    kinds: dict[str, KindSummary] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "mode": self.mode,
            "trials": self.trials,
            "base_seed": self.base_seed,
            "kinds": {k: v.as_dict() for k, v in sorted(self.kinds.items())},
        }


def _trace_to_result(trace: EpisodeTrace) -> TrialResult:
    return TrialResult(
        seed=trace.seed,
        kind=trace.kind,
        collided=trace.collided,
        cost=trace.total_cost,
        steps=len(trace.records),
        reached_goal=trace.reached_goal,
        budget_trace=np.array([r.budget for r in trace.records]),
        planned_risk_trace=np.array([r.planned_risk for r in trace.records]),
        min_distance_trace=np.array([r.min_agent_distance for r in trace.records]),
    )


def run_trial(scenario: Scenario, kinds: list[str], irb: IRB, seed: int,
              noise_scale: float = 1.0) -> list[TrialResult]:
    """All requested controllers against one shared world draw."""
    gt = sample_ground_truth(scenario, seed, noise_scale)
    results = []
    for kind in kinds:
        try:
            trace = run_episode(kind, scenario, irb, seed, ground_truth=gt,
                                noise_scale=noise_scale)
            results.append(_trace_to_result(trace))
        except Exception as exc:  # per-trial failures are recorded, not fatal
            results.append(TrialResult(
                seed=seed, kind=kind, collided=False, cost=math.nan, steps=0,
                reached_goal=False, budget_trace=np.array([]),
                planned_risk_trace=np.array([]), min_distance_trace=np.array([]),
                error=f"{type(exc).__name__}: {exc}",
            ))
    return results


_POOL_ARGS: dict = {}


def _pool_init(scenario, kinds, irb, noise_scale):
    _POOL_ARGS.update(scenario=scenario, kinds=kinds, irb=irb,
                      noise_scale=noise_scale)


def _pool_trial(seed: int) -> list[TrialResult]:
    return run_trial(_POOL_ARGS["scenario"], _POOL_ARGS["kinds"],
                     _POOL_ARGS["irb"], seed, _POOL_ARGS["noise_scale"])


def run_monte_carlo(
    scenario: Scenario,
    kinds: list[str],
    irb: IRB,
    trials: int,
    base_seed: int,
    mode: str = GUARANTEE,
    jobs: int = 1,
) -> tuple[MonteCarloSummary, list[TrialResult]]:
    """Paired seeded trials for each controller kind, plus aggregates.

    Raises ConfigError if more than 1% of trials error out; individual trial
    errors are recorded in the result stream.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if mode not in (GUARANTEE, MODEL_MISMATCH):
        raise ConfigError(f"unknown mode {mode!r}")
    noise_scale = 1.0 if mode == GUARANTEE else MISMATCH_NOISE_SCALE
    seeds = range(base_seed, base_seed + trials)

    all_results: list[TrialResult] = []
    if jobs > 1:
        with multiprocessing.Pool(
            jobs, initializer=_pool_init,
            initargs=(scenario, kinds, irb, noise_scale),
        ) as pool:
            for batch in pool.imap(_pool_trial, seeds, chunksize=8):
                all_results.extend(batch)
    else:
        for seed in seeds:
            all_results.extend(run_trial(scenario, kinds, irb, seed, noise_scale))

    summary = MonteCarloSummary(scenario=scenario.name, mode=mode,
                                trials=trials, base_seed=base_seed)
    for kind in kinds:
        rows = [r for r in all_results if r.kind == kind]
        good = [r for r in rows if r.error is None]
        n_err = len(rows) - len(good)
        if n_err > 0.01 * trials:
            raise ConfigError(
                f"{kind}: {n_err}/{trials} trials failed; first error: "
                f"{next(r.error for r in rows if r.error is not None)}"
            )
        n = len(good)
        collisions = sum(r.collided for r in good)
        rate = collisions / n if n else math.nan
        costs = np.array([r.cost for r in good])
        summary.kinds[kind] = KindSummary(
            kind=kind, trials=n, collisions=collisions,
            collision_rate=rate,
            collision_rate_se=math.sqrt(rate * (1.0 - rate) / n) if n else math.nan,
            mean_cost=float(costs.mean()) if n else math.nan,
            mean_cost_se=float(costs.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
            errors=n_err,
        )
    return summary, all_results


def wilson_interval(successes: int, n: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def paired_mean_upper_bound(diffs: np.ndarray, confidence: float = 0.95) -> float:
    """One-sided upper confidence bound on the mean of paired differences."""
    diffs = np.asarray(diffs, dtype=float)
    n = len(diffs)
    if n < 2:
        raise ValueError("need at least two paired differences")
    t = stats.t.ppf(confidence, n - 1)
    return float(diffs.mean() + t * diffs.std(ddof=1) / math.sqrt(n))
