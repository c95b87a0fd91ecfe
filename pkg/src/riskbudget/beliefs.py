"""World belief state and its update rules.

A world belief couples a Gaussian longitudinal ego belief with, per agent, a
categorical mixture over predicted motion patterns. Three updates are
provided:

* ``open_loop_update`` propagates with no observation: ego mean follows the
  kinematics, ego covariance accretes process noise, mixture weights freeze.
* ``bayes_update`` conditions on a received observation: the ego belief
  collapses onto the (exactly observed) ego state and mixture weights are
  reweighted by each pattern's likelihood of the observed agent position.
* ``pcl_update`` propagates as open-loop but reweights the mixture as a Bayes
  step against the position the currently dominant pattern predicts, i.e. the
  most likely forthcoming observation. Optimistic; used as the in-horizon
  heuristic update.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateObservationError, HorizonExhaustedError
from .vehicle import EgoKinematicState, ReferencePath, StopParams, advance_saturated

_ZERO2 = np.zeros((2, 2))


@dataclass(frozen=True)
class EgoBelief:
    """Gaussian belief over (s, v); covariance units m^2, m^2/s, m^2/s^2."""

    mean: EgoKinematicState
    cov: np.ndarray

    @property
    def stopped(self) -> bool:
        """Deterministically at rest: zero mean speed and zero speed variance."""
        return self.mean.v == 0.0 and self.cov[1, 1] == 0.0

    @classmethod
    def exact(cls, state: EgoKinematicState) -> "EgoBelief":
        return cls(mean=state, cov=_ZERO2.copy())


@dataclass(frozen=True)
class AgentPattern:
    """One predicted motion pattern: mixture weight plus a per-step Gaussian
    marginal (mean position, position covariance, heading) over the full
    prediction horizon."""

    weight: float
    means: np.ndarray      # (L, 2) positions
    covs: np.ndarray       # (L, 2, 2) position covariances
    headings: np.ndarray   # (L,)

    def __post_init__(self):
        if not (self.means.ndim == 2 and self.means.shape[1] == 2):
            raise ValueError("pattern means must have shape (L, 2)")
        if self.covs.shape != (self.means.shape[0], 2, 2):
            raise ValueError("pattern covs must have shape (L, 2, 2)")
        if self.headings.shape != (self.means.shape[0],):
            raise ValueError("pattern headings must have shape (L,)")

    def __len__(self) -> int:
        return self.means.shape[0]

    def marginal(self, step: int) -> tuple[np.ndarray, np.ndarray, float]:
        if step >= len(self) or step < 0:
            raise HorizonExhaustedError(
                f"pattern covers steps [0, {len(self) - 1}], requested {step}"
            )
        return self.means[step], self.covs[step], float(self.headings[step])


@dataclass(frozen=True)
class WorldBelief:
    """Ego belief plus per-agent pattern mixtures at episode step `step`."""

    ego: EgoBelief
    agents: tuple[tuple[AgentPattern, ...], ...]
    step: int

    def agent_weights(self) -> list[np.ndarray]:
        return [np.array([p.weight for p in patterns]) for patterns in self.agents]

    def validate(self, tol: float = 1e-9) -> None:
        for i, patterns in enumerate(self.agents):
            total = sum(p.weight for p in patterns)
            if abs(total - 1.0) > tol:
                raise ValueError(f"agent {i} pattern weights sum to {total}")
        eig = np.linalg.eigvalsh(0.5 * (self.ego.cov + self.ego.cov.T))
        if eig.min() < -1e-9:
            raise ValueError(f"ego covariance not PSD (min eigenvalue {eig.min()})")


@dataclass(frozen=True)
class StoppedBeliefSet:
    """Membership test for the stopped belief set (exact-zero speed semantics)."""

    velocity_threshold: float = 0.0

    def contains(self, belief: WorldBelief) -> bool:
        ego = belief.ego
        return ego.mean.v <= self.velocity_threshold and ego.cov[1, 1] == 0.0


@dataclass(frozen=True)
class WorldObservation:
    """Exact ego state plus one observed position per agent."""

    ego: EgoKinematicState
    agent_positions: np.ndarray  # (n_agents, 2)


@dataclass(frozen=True)
class WorldModel:
    """Shared dynamics context for belief propagation."""

    path: ReferencePath
    dt: float
    process_noise: np.ndarray            # (2, 2) covariance rate over (s, v)
    stop: StopParams
    v_max: float
    ego_meas_cov: np.ndarray | None = None    # None means exact observation
    agent_meas_cov: np.ndarray | None = None  # None means exact observation


def is_stopped(belief: WorldBelief) -> bool:
    return belief.ego.stopped


def _propagate_ego(ego: EgoBelief, u: float, model: WorldModel) -> EgoBelief:
    state1 = advance_saturated(ego.mean, u, model.dt, model.path, model.v_max)
    moved = ego.mean.v > 0.0 or state1.v > 0.0
    cov = ego.cov + model.process_noise * model.dt if moved else ego.cov.copy()
    if state1.v == 0.0:
        # Braking to rest pins the speed: the stopped set requires a
        # deterministic zero speed, and the executed stop enforces it.
        cov = cov.copy()
        cov[1, 1] = 0.0
        cov[0, 1] = 0.0
        cov[1, 0] = 0.0
    return EgoBelief(mean=state1, cov=cov)


def open_loop_update(belief: WorldBelief, u: float, model: WorldModel) -> WorldBelief:
    """Observation-free propagation: mixture weights are unchanged."""
    return WorldBelief(
        ego=_propagate_ego(belief.ego, u, model),
        agents=belief.agents,
        step=belief.step + 1,
    )


def _pattern_likelihood(pattern: AgentPattern, step: int, position: np.ndarray,
                        meas_cov: np.ndarray | None) -> float:
    mean, cov, _ = pattern.marginal(step)
    if meas_cov is not None:
        cov = cov + meas_cov
    return _gaussian_pdf2(position - mean, cov)


def _gaussian_pdf2(d: np.ndarray, cov: np.ndarray) -> float:
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if det < 1e-18:
        # Degenerate marginal: point-mass semantics.
        return 1.0 if float(np.hypot(d[0], d[1])) < 1e-9 else 0.0
    quad = (cov[1, 1] * d[0] * d[0] - 2.0 * cov[0, 1] * d[0] * d[1]
            + cov[0, 0] * d[1] * d[1]) / det
    return float(np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(det)))


def _reweight(patterns: tuple[AgentPattern, ...], step: int, position: np.ndarray,
              meas_cov: np.ndarray | None) -> tuple[AgentPattern, ...]:
    likes = np.array([_pattern_likelihood(p, step, position, meas_cov) for p in patterns])
    weights = np.array([p.weight for p in patterns])
    posterior = weights * likes
    total = posterior.sum()
    if total < 1e-300:
        raise DegenerateObservationError(
            f"observed position {position} has zero likelihood under all patterns at step {step}"
        )
    posterior /= total
    return tuple(replace(p, weight=float(w)) for p, w in zip(patterns, posterior))


def bayes_update(belief: WorldBelief, u: float, obs: WorldObservation,
                 model: WorldModel) -> WorldBelief:
    """Condition on a received observation after executing control u.

    The ego state is observed exactly (up to the configured measurement
    covariance, zero by default), so the ego belief collapses onto it. Agent
    mixture weights are reweighted by the likelihood of each agent's observed
    position under each pattern's marginal at the new step.
    """
    step1 = belief.step + 1
    meas = model.ego_meas_cov if model.ego_meas_cov is not None else _ZERO2
    ego = EgoBelief(mean=obs.ego, cov=meas.copy())
    agents = tuple(
        _reweight(patterns, step1, obs.agent_positions[i], model.agent_meas_cov)
        for i, patterns in enumerate(belief.agents)
    )
    return WorldBelief(ego=ego, agents=agents, step=step1)


def most_likely_positions(belief: WorldBelief, step: int) -> list[np.ndarray]:
    """Predicted agent positions under each agent's currently dominant pattern."""
    out = []
    for patterns in belief.agents:
        weights = np.array([p.weight for p in patterns])
        dominant = patterns[int(np.argmax(weights))]
        mean, _, _ = dominant.marginal(step)
        out.append(mean)
    return out


def pcl_update(belief: WorldBelief, u: float, model: WorldModel) -> WorldBelief:
    """Heuristic update: propagate open-loop, then reweight each agent's
    mixture as a Bayes step against the dominant pattern's predicted position.
    Per-pattern marginals are left untouched."""
    step1 = belief.step + 1
    ego = _propagate_ego(belief.ego, u, model)
    predicted = most_likely_positions(belief, step1)
    agents = tuple(
        _reweight(patterns, step1, predicted[i], model.agent_meas_cov)
        for i, patterns in enumerate(belief.agents)
    )
    return WorldBelief(ego=ego, agents=agents, step=step1)


def reweight_rows(weights: np.ndarray, patterns: tuple[AgentPattern, ...], step: int,
                  meas_cov: np.ndarray | None) -> np.ndarray:
    """One step of the dominant-pattern reweighting on a bare weight vector.

    Vector-level twin of the agent part of :func:`pcl_update`, used where the
    planner tracks per-layer weights without materializing beliefs.
    """
    dominant = patterns[int(np.argmax(weights))]
    position, _, _ = dominant.marginal(step)
    likes = np.array([_pattern_likelihood(p, step, position, meas_cov) for p in patterns])
    posterior = weights * likes
    total = posterior.sum()
    if total < 1e-300:
        raise DegenerateObservationError(
            f"predicted observation at step {step} has zero likelihood under all patterns"
        )
    return posterior / total
