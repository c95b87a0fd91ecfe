"""Scenario definitions and ground-truth sampling.

A scenario bundles the ego path, footprints, limits and lattice settings with
the agents' predicted motion patterns. Ground truth is sampled from the very
distributions the planner is given: each agent draws a pattern by its mixture
weight, then one shared standard-normal factor scales through the per-step
covariances (temporally correlated, so sampled tracks stay smooth while the
per-step marginals match the prediction exactly); the ego start is drawn from
its spread and per-step tracking noise is pre-drawn so paired trials share
identical randomness across controllers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .beliefs import AgentPattern, EgoBelief, WorldBelief, WorldModel
from .lattice import LatticeSpec
from .risk import CollisionModel, build_collision_model
from .vehicle import EgoKinematicState, FootprintSpec, ReferencePath, StopParams

DEFAULT_PROCESS_NOISE = np.diag([0.05 ** 2, 0.05 ** 2])
DEFAULT_ACCELS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0)


@dataclass(frozen=True)
class AgentSpec:
    footprints: tuple[FootprintSpec, ...]
    patterns: tuple[AgentPattern, ...]

    def __post_init__(self):
        total = sum(p.weight for p in self.patterns)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"pattern weights sum to {total}, expected 1")


@dataclass(frozen=True)
class Scenario:
    name: str
    path: ReferencePath
    dt: float
    horizon: int
    goal_s: float
    ego_footprints: tuple[FootprintSpec, ...]
    ego_start: EgoKinematicState
    ego_spread: tuple[float, float]
    v_max: float
    a_max: float
    stop: StopParams
    agents: tuple[AgentSpec, ...]
    process_noise: np.ndarray
    lattice: LatticeSpec
    disks_per_rect: int = 3
    passive_safety: bool = True

    def __post_init__(self):
        needed = self.horizon + self.lattice.plan_horizon + self.stop.t_stop
        for i, agent in enumerate(self.agents):
            for j, p in enumerate(agent.patterns):
                if len(p) <= needed:
                    raise ValueError(
                        f"agent {i} pattern {j} covers {len(p)} steps, needs > {needed}"
                    )
        if -self.stop.u_stop not in self.lattice.accels:
            raise ValueError("acceleration set must contain -u_stop")
        if not 0.0 <= self.goal_s <= self.path.length:
            raise ValueError("goal must lie on the path")

    def world_model(self) -> WorldModel:
        return WorldModel(
            path=self.path, dt=self.dt, process_noise=self.process_noise,
            stop=self.stop, v_max=self.v_max,
        )

    def collision_model(self) -> CollisionModel:
        return build_collision_model(
            self.path, list(self.ego_footprints),
            [list(a.footprints) for a in self.agents],
            n_disks=self.disks_per_rect, passive_safety=self.passive_safety,
        )

    def initial_belief(self, ego_state: EgoKinematicState) -> WorldBelief:
        return WorldBelief(
            ego=EgoBelief.exact(ego_state),
            agents=tuple(a.patterns for a in self.agents),
            step=0,
        )


@dataclass(frozen=True)
class GroundTruth:
    """One realized world: fixed agent tracks plus pre-drawn ego randomness."""

    seed: int
    ego_start: EgoKinematicState
    ego_noise: np.ndarray                    # (T, 2) tracking-noise increments
    chosen_patterns: tuple[int, ...]
    agent_tracks: tuple[np.ndarray, ...]     # per agent (L, 2)
    agent_headings: tuple[np.ndarray, ...]   # per agent (L,)


def sample_ground_truth(scenario: Scenario, seed: int,
                        noise_scale: float = 1.0) -> GroundTruth:
    """Draw one world realization, fully determined by the seed.

    noise_scale inflates the true spreads relative to the model (1.0 keeps
    the simulator exactly model-consistent).
    """
    rng = np.random.default_rng(seed)
    s0 = float(np.clip(scenario.ego_start.s + scenario.ego_spread[0]
                       * noise_scale * rng.standard_normal(),
                       0.0, scenario.path.length))
    v0 = float(np.clip(scenario.ego_start.v + scenario.ego_spread[1]
                       * noise_scale * rng.standard_normal(),
                       0.0, scenario.v_max))
    stds = np.sqrt(np.diag(scenario.process_noise) * scenario.dt) * noise_scale
    ego_noise = rng.standard_normal((scenario.horizon, 2)) * stds

    chosen, tracks, headings = [], [], []
    for agent in scenario.agents:
        weights = np.array([p.weight for p in agent.patterns])
        pick = int(np.searchsorted(np.cumsum(weights), rng.random()))
        pick = min(pick, len(agent.patterns) - 1)
        pattern = agent.patterns[pick]
        z = rng.standard_normal(2) * noise_scale
        track = pattern.means + _correlated_offsets(pattern.covs, z)
        chosen.append(pick)
        tracks.append(track)
        headings.append(pattern.headings.copy())
    return GroundTruth(
        seed=seed, ego_start=EgoKinematicState(s=s0, v=v0), ego_noise=ego_noise,
        chosen_patterns=tuple(chosen), agent_tracks=tuple(tracks),
        agent_headings=tuple(headings),
    )


def _correlated_offsets(covs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-step Cholesky factors applied to one shared normal draw."""
    a = covs[:, 0, 0]
    b = covs[:, 0, 1]
    c = covs[:, 1, 1]
    sa = np.sqrt(np.maximum(a, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        l21 = np.where(sa > 0, b / np.where(sa > 0, sa, 1.0), 0.0)
    l22 = np.sqrt(np.maximum(c - l21 * l21, 0.0))
    dx = sa * z[0]
    dy = l21 * z[0] + l22 * z[1]
    return np.stack([dx, dy], axis=1)


def polyline_positions(waypoints, distances: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positions and headings along a polyline at given traveled distances.

    Distances clamp at the polyline ends, so an agent holds its final pose
    once its route is exhausted.
    """
    route = ReferencePath(np.asarray(waypoints, dtype=float))
    x, y, h = route.poses_at(np.clip(distances, 0.0, route.length))
    return np.stack([x, y], axis=1), h


def constant_speed_distances(speed: float, dt: float, n_steps: int,
                             pause_steps: int = 0, start: float = 0.0) -> np.ndarray:
    times = np.arange(n_steps + 1) * dt
    return start + speed * np.maximum(times - pause_steps * dt, 0.0)


def ramp_sigmas(sigma0: float, sigma1: float, n_steps: int) -> np.ndarray:
    return np.linspace(sigma0, sigma1, n_steps + 1)


def piecewise_sigmas(knots: list[tuple[int, float]], n_steps: int) -> np.ndarray:
    """Per-step spreads interpolated through (step, sigma) knots; constant
    beyond the last knot. Lets uncertainty grow toward a maneuver decision
    and re-tighten once the maneuver pins the vehicle down."""
    steps = np.array([k for k, _ in knots], dtype=float)
    vals = np.array([s for _, s in knots], dtype=float)
    return np.interp(np.arange(n_steps + 1, dtype=float), steps, vals)


def make_pattern(weight: float, waypoints, distances: np.ndarray,
                 sigmas: np.ndarray) -> AgentPattern:
    """Pattern from a route, a travel schedule and per-step isotropic spreads."""
    means, headings = polyline_positions(waypoints, distances)
    sigmas = np.asarray(sigmas, dtype=float)
    covs = np.einsum("i,jk->ijk", sigmas ** 2, np.eye(2))
    return AgentPattern(weight=weight, means=means, covs=covs, headings=headings)


def _standard_lattice(goal_s: float, n: int, dt: float, v_max: float,
                      ds: float = 0.5, dv: float = 0.5,
                      accels: tuple[float, ...] = DEFAULT_ACCELS) -> LatticeSpec:
    return LatticeSpec(
        s_resolution=ds, v_resolution=dv, plan_horizon=n, dt=dt, v_max=v_max,
        accels=accels, goal_s=goal_s,
    )


def clear_road() -> Scenario:
    """Straight empty road; exercises the machinery with zero risk anywhere."""
    dt, horizon, v_max = 1.0, 15, 4.0
    path = ReferencePath(np.array([[0.0, 0.0], [80.0, 0.0]]))
    return Scenario(
        name="clear_road",
        path=path, dt=dt, horizon=horizon, goal_s=40.0,
        ego_footprints=(FootprintSpec(12.6, 2.4),),
        ego_start=EgoKinematicState(s=0.0, v=2.0),
        ego_spread=(0.5, 0.2),
        v_max=v_max, a_max=1.0,
        stop=StopParams.from_limits(2.0, v_max, dt),
        agents=(),
        process_noise=DEFAULT_PROCESS_NOISE.copy(),
        lattice=_standard_lattice(40.0, 15, dt, v_max),
    )


def exp1_tjunction() -> Scenario:
    """Straight yard road crossed by one bus-sized vehicle turning left.

    The agent follows a single pattern that sweeps across the ego lane; an
    unconstrained ego would reach the junction inside the sweep window, so
    the planner has to shape its speed around it.
    """
    dt, horizon, v_max = 1.0, 25, 4.0
    n_pred = horizon + 25 + 2 + 1
    path = ReferencePath(np.array([[0.0, 0.0], [70.0, 0.0]]))
    agent_route = [[32.0, 24.0], [32.0, 6.0], [30.0, -2.0], [24.0, -8.0], [16.0, -12.0], [-20.0, -12.0]]
    pattern = make_pattern(
        weight=1.0,
        waypoints=agent_route,
        distances=constant_speed_distances(3.0, dt, n_pred, pause_steps=0),
        sigmas=ramp_sigmas(0.3, 1.8, n_pred),
    )
    return Scenario(
        name="exp1_tjunction",
        path=path, dt=dt, horizon=horizon, goal_s=50.0,
        ego_footprints=(FootprintSpec(12.6, 2.4),),
        ego_start=EgoKinematicState(s=0.0, v=3.0),
        ego_spread=(0.5, 0.2),
        v_max=v_max, a_max=1.0,
        stop=StopParams.from_limits(2.0, v_max, dt),
        agents=(AgentSpec(footprints=(FootprintSpec(12.6, 2.4),),
                          patterns=(pattern,)),),
        process_noise=DEFAULT_PROCESS_NOISE.copy(),
        lattice=_standard_lattice(50.0, 25, dt, v_max),
    )


def exp2_three_vehicle() -> Scenario:
    """Left turn off a single-track yard lane shared with oncoming traffic.

    Vehicle 1 leads the ego along the route and pulls away. Vehicle 2 comes
    head-on down the shared lane and turns off into one of two side aisles:
    the near one with 70% probability, the far one (deep along the ego's
    lane) with 30%. Which aisle it takes is only revealed once it reaches
    the near turn-off, well after the ego has had to commit to a standoff
    distance, and its prediction spread grows strongly over the horizon.

    The reference path carries a 15 m lead-in so the ego trailer's reference
    point stays on the path from the start.
    """
    dt, horizon, v_max = 1.0, 25, 4.0
    n_pred = horizon + 25 + 2 + 1
    ego_route = np.array([
        [-15.0, 0.0], [0.0, 0.0], [20.0, 0.0], [36.0, 0.0], [40.0, 0.8],
        [43.0, 2.4], [45.2, 4.8], [46.0, 7.7], [46.0, 16.0],
    ])
    path = ReferencePath(ego_route)
    tractor = FootprintSpec(5.0, 2.5, offset=0.0)
    trailer = FootprintSpec(12.5, 2.4, offset=-8.75)

    lead = make_pattern(
        weight=1.0,
        waypoints=ego_route.tolist() + [[46.0, 70.0]],
        distances=constant_speed_distances(3.8, dt, n_pred, start=48.0),
        sigmas=ramp_sigmas(0.3, 1.2, n_pred),
    )
    oncoming_near_turn = make_pattern(
        weight=0.7,
        waypoints=[[62.0, 0.0], [44.0, 0.0], [41.0, -2.4], [40.0, -6.0],
                   [40.0, -40.0]],
        distances=constant_speed_distances(2.2, dt, n_pred),
        sigmas=piecewise_sigmas([(0, 0.4), (10, 1.6), (16, 0.7), (n_pred, 0.7)], n_pred),
    )
    oncoming_far_turn = make_pattern(
        weight=0.3,
        waypoints=[[62.0, 0.0], [26.0, 0.0], [22.5, -3.0], [21.0, -7.0],
                   [21.0, -40.0]],
        distances=constant_speed_distances(2.2, dt, n_pred),
        sigmas=piecewise_sigmas([(0, 0.4), (16, 2.2), (21, 0.6), (n_pred, 0.6)], n_pred),
    )
    return Scenario(
        name="exp2_three_vehicle",
        path=path, dt=dt, horizon=horizon, goal_s=62.0,
        ego_footprints=(tractor, trailer),
        ego_start=EgoKinematicState(s=15.0, v=3.0),
        ego_spread=(0.5, 0.2),
        v_max=v_max, a_max=1.0,
        stop=StopParams.from_limits(2.0, v_max, dt),
        agents=(
            AgentSpec(footprints=(tractor, trailer), patterns=(lead,)),
            AgentSpec(footprints=(tractor, trailer),
                      patterns=(oncoming_near_turn, oncoming_far_turn)),
        ),
        process_noise=DEFAULT_PROCESS_NOISE.copy(),
        lattice=_standard_lattice(62.0, 25, dt, v_max, ds=1.0),
    )


def adversarial_crossing() -> Scenario:
    """Late-reveal crossing engineered against optimistic belief updates.

    The crossing agent approaches the junction from the side and either
    yields (decelerating to a stop short of the road, 70%) or cuts straight
    across (30%). The two patterns separate only once the yield begins, just
    before an at-speed ego reaches the junction. A planner that banks on the
    mixture collapsing to the likely pattern commits at speed and is still
    inside the sweep when a crosser is revealed; a planner that keeps the
    stop contingency priced in hangs back until the split.
    """
    dt, horizon, v_max = 1.0, 16, 4.0
    n_pred = horizon + 16 + 2 + 1
    path = ReferencePath(np.array([[0.0, 0.0], [60.0, 0.0]]))
    speed = 4.0
    times = np.arange(n_pred + 1) * dt
    benign = make_pattern(
        weight=0.7,
        waypoints=[[30.0, 26.0], [30.0, -30.0]],
        distances=np.minimum(speed * times, 19.0),  # yields 7 m short of the road
        sigmas=piecewise_sigmas([(0, 0.25), (4, 0.4), (7, 0.3), (n_pred, 0.3)], n_pred),
    )
    crosser = make_pattern(
        weight=0.3,
        waypoints=[[30.0, 26.0], [30.0, -30.0]],
        distances=constant_speed_distances(speed, dt, n_pred),
        sigmas=ramp_sigmas(0.25, 0.8, n_pred),
    )
    return Scenario(
        name="adversarial_crossing",
        path=path, dt=dt, horizon=horizon, goal_s=48.0,
        ego_footprints=(FootprintSpec(6.0, 2.4),),
        ego_start=EgoKinematicState(s=5.0, v=4.0),
        ego_spread=(0.3, 0.1),
        v_max=v_max, a_max=1.0,
        stop=StopParams.from_limits(2.0, v_max, dt),
        agents=(AgentSpec(footprints=(FootprintSpec(6.0, 2.4),),
                          patterns=(benign, crosser)),),
        process_noise=np.diag([0.02 ** 2, 0.02 ** 2]),
        lattice=_standard_lattice(48.0, 16, dt, v_max),
    )


def builtin_scenarios() -> dict[str, "callable"]:
    return {
        "clear_road": clear_road,
        "exp1_tjunction": exp1_tjunction,
        "exp2_three_vehicle": exp2_three_vehicle,
        "adversarial_crossing": adversarial_crossing,
    }
