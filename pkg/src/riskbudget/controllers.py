"""Receding-horizon controllers: the risk-budgeted planner and three
joint-chance-constrained baselines, plus the episode executor.

The budgeted controller keeps a running risk ledger: every feasible solve
debits the risk its first step commits (the collision bound at the open-loop
successor plus the emergency-stop bound from there), every step credits the
per-step allowance, and infeasible steps fall back to the emergency stop (or
holding still when already stopped) with no debit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .beliefs import (EgoBelief, WorldBelief, WorldModel, WorldObservation,
                      bayes_update, is_stopped)
from .geometry import rect_corners, rects_overlap
from .lattice import LatticeSpec, SpeedPlan, solve_chance_constrained
from .risk import CollisionModel, collision_probability
from .scenarios import GroundTruth, Scenario, sample_ground_truth
from .vehicle import EgoKinematicState, advance_saturated, emergency_stop_controls

log = logging.getLogger(__name__)

RB_RHC = "rb-rhc"
JCC_FH = "jcc-fh"
JCC_RHC = "jcc-rhc"
PCL_RHC = "pcl-rhc"
CONTROLLER_KINDS = (RB_RHC, JCC_FH, JCC_RHC, PCL_RHC)


@dataclass(frozen=True)
class IRB:
    """Interval risk bound: collision probability over any [0, k], k <= horizon,
    must stay within rho0 + delta * k."""

    rho0: float
    delta: float
    horizon: int

    def __post_init__(self):
        if self.rho0 < 0 or self.delta < 0:
            raise ValueError("IRB parameters must be nonnegative")

    def bound(self, k: int) -> float:
        return self.rho0 + self.delta * k


@dataclass(frozen=True)
class LedgerRecord:
    step: int
    action: str              # "plan" | "stop" | "noop"
    risk_subtracted: float
    delta_added: float


class RiskLedger:
    """Running risk budget with an auditable debit/credit history.

    Maintains the identity rho == rho0 + delta * k - sum(subtracted) to
    floating-point accuracy; subtraction never exceeds the current budget
    (asserted, which the planner's constraint guarantees).
    """

    def __init__(self, irb: IRB):
        self.irb = irb
        self.rho = irb.rho0
        self.history: list[LedgerRecord] = []

    def apply(self, step: int, action: str, risk_subtracted: float) -> None:
        """One controller step: debit incurred risk, then credit delta."""
        assert risk_subtracted <= self.rho + 1e-12, (
            f"subtraction {risk_subtracted} exceeds budget {self.rho}"
        )
        self.rho = self.rho - risk_subtracted + self.irb.delta
        self.history.append(LedgerRecord(step, action, risk_subtracted, self.irb.delta))

    def verify(self, tol: float = 1e-12) -> None:
        """Recompute the ledger identity and the never-over-budget property."""
        k = len(self.history)
        subtracted = sum(r.risk_subtracted for r in self.history)
        expected = self.irb.rho0 + self.irb.delta * k - subtracted
        if abs(self.rho - expected) > tol:
            raise AssertionError(f"ledger identity violated: {self.rho} != {expected}")
        running = 0.0
        for i, rec in enumerate(self.history):
            running += rec.risk_subtracted
            if running > self.irb.bound(i) + tol:
                raise AssertionError(
                    f"cumulative subtracted risk {running} exceeds bound {self.irb.bound(i)} at step {i}"
                )


@dataclass
class StepDecision:
    control: float
    feasible: bool
    plan: SpeedPlan | None
    planned_risk: float      # NaN when no plan
    subtracted: float


def rbrhc_step(
    belief: WorldBelief,
    ledger: RiskLedger,
    spec: LatticeSpec,
    cmodel: CollisionModel,
    wmodel: WorldModel,
    update_rule: str = "pcl",
) -> StepDecision:
    """One budgeted receding-horizon step.

    Solves the budget-constrained plan; if feasible, executes its first
    control and debits that step's committed risk, otherwise brakes (or holds
    still when already stopped) without debiting. Either way the budget is
    credited delta afterward.
    """
    plan = solve_chance_constrained(
        belief, ledger.rho, spec, cmodel, wmodel, update_rule=update_rule,
        first_step_open_loop=True, include_stop_risk=True,
    )
    if plan is not None:
        subtracted = plan.first_step_risk()
        ledger.apply(belief.step, "plan", subtracted)
        return StepDecision(plan.controls[0], True, plan, plan.total_risk, subtracted)
    if not is_stopped(belief):
        ledger.apply(belief.step, "stop", 0.0)
        return StepDecision(-wmodel.stop.u_stop, False, None, math.nan, 0.0)
    ledger.apply(belief.step, "noop", 0.0)
    return StepDecision(0.0, False, None, math.nan, 0.0)


def jcc_fh_plan(
    belief: WorldBelief,
    alpha: float,
    spec: LatticeSpec,
    cmodel: CollisionModel,
    wmodel: WorldModel,
) -> SpeedPlan | None:
    """Single full-horizon open-loop plan under a total chance constraint.

    The constraint covers every step including the current one, with purely
    open-loop belief propagation and no stop terms; the plan is executed with
    no replanning.
    """
    residual = alpha - collision_probability(belief, cmodel)
    if residual < 0:
        return None
    return solve_chance_constrained(
        belief, residual, spec, cmodel, wmodel, update_rule="open_loop",
        first_step_open_loop=True, include_stop_risk=False,
    )


def _contingency(belief: WorldBelief, wmodel: WorldModel) -> StepDecision:
    if not is_stopped(belief):
        return StepDecision(-wmodel.stop.u_stop, False, None, math.nan, 0.0)
    return StepDecision(0.0, False, None, math.nan, 0.0)


def jcc_rhc_step(
    belief: WorldBelief,
    spec: LatticeSpec,
    cmodel: CollisionModel,
    wmodel: WorldModel,
    per_iter_alpha: float,
) -> StepDecision:
    """Receding-horizon step with a fresh per-iteration chance constraint and
    open-loop in-horizon belief propagation (no ledger, no stop terms)."""
    plan = solve_chance_constrained(
        belief, per_iter_alpha, spec, cmodel, wmodel, update_rule="open_loop",
        first_step_open_loop=True, include_stop_risk=False,
    )
    if plan is not None:
        return StepDecision(plan.controls[0], True, plan, plan.total_risk, 0.0)
    return _contingency(belief, wmodel)


def pcl_rhc_step(
    belief: WorldBelief,
    spec: LatticeSpec,
    cmodel: CollisionModel,
    wmodel: WorldModel,
    per_iter_alpha: float,
) -> StepDecision:
    """Fully heuristic baseline: dominant-pattern reweighting from the very
    first transition and no emergency-stop risk terms."""
    plan = solve_chance_constrained(
        belief, per_iter_alpha, spec, cmodel, wmodel, update_rule="pcl",
        first_step_open_loop=False, include_stop_risk=False,
    )
    if plan is not None:
        return StepDecision(plan.controls[0], True, plan, plan.total_risk, 0.0)
    return _contingency(belief, wmodel)


class _Controller:
    kind: str = ""

    def step(self, belief: WorldBelief) -> StepDecision:
        raise NotImplementedError

    @property
    def ledger(self) -> RiskLedger | None:
        return None


class RiskBudgetController(_Controller):
    kind = RB_RHC

    def __init__(self, scenario: Scenario, irb: IRB, update_rule: str = "pcl"):
        self.spec = scenario.lattice
        self.cmodel = scenario.collision_model()
        self.wmodel = scenario.world_model()
        self.update_rule = update_rule
        self._ledger = RiskLedger(irb)

    @property
    def ledger(self) -> RiskLedger:
        return self._ledger

    def step(self, belief: WorldBelief) -> StepDecision:
        return rbrhc_step(belief, self._ledger, self.spec, self.cmodel,
                          self.wmodel, self.update_rule)


class JccFiniteHorizonController(_Controller):
    kind = JCC_FH

    def __init__(self, scenario: Scenario, irb: IRB):
        self.scenario = scenario
        self.cmodel = scenario.collision_model()
        self.wmodel = scenario.world_model()
        self.alpha = irb.bound(irb.horizon)
        self.controls: list[float] | None = None
        self.infeasible_at_start = False

    def step(self, belief: WorldBelief) -> StepDecision:
        if self.controls is None:
            spec = self.scenario.lattice
            full = LatticeSpec(
                s_resolution=spec.s_resolution, v_resolution=spec.v_resolution,
                plan_horizon=self.scenario.horizon, dt=spec.dt, v_max=spec.v_max,
                accels=spec.accels, goal_s=spec.goal_s,
            )
            plan = jcc_fh_plan(belief, self.alpha, full, self.cmodel, self.wmodel)
            if plan is None:
                # No feasible full-horizon plan: brake to a stop and stay.
                self.infeasible_at_start = True
                stops = emergency_stop_controls(belief.ego.mean.v, self.wmodel.stop)
                self.controls = stops + [0.0] * (self.scenario.horizon - len(stops))
                self._plan = None
            else:
                self.controls = list(plan.controls)
                self._plan = plan
        k = belief.step
        feasible = not self.infeasible_at_start
        planned = self._plan.total_risk if self._plan is not None else math.nan
        return StepDecision(self.controls[k], feasible,
                            self._plan if k == 0 else None, planned, 0.0)


class JccRecedingController(_Controller):
    kind = JCC_RHC

    def __init__(self, scenario: Scenario, irb: IRB):
        self.spec = scenario.lattice
        self.cmodel = scenario.collision_model()
        self.wmodel = scenario.world_model()
        alpha = irb.bound(irb.horizon)
        self.per_iter = alpha * self.spec.plan_horizon / irb.horizon

    def step(self, belief: WorldBelief) -> StepDecision:
        return jcc_rhc_step(belief, self.spec, self.cmodel, self.wmodel, self.per_iter)


class PclRecedingController(_Controller):
    kind = PCL_RHC

    def __init__(self, scenario: Scenario, irb: IRB):
        self.spec = scenario.lattice
        self.cmodel = scenario.collision_model()
        self.wmodel = scenario.world_model()
        alpha = irb.bound(irb.horizon)
        self.per_iter = alpha * self.spec.plan_horizon / irb.horizon

    def step(self, belief: WorldBelief) -> StepDecision:
        return pcl_rhc_step(belief, self.spec, self.cmodel, self.wmodel, self.per_iter)


def make_controller(kind: str, scenario: Scenario, irb: IRB) -> _Controller:
    if kind == RB_RHC:
        return RiskBudgetController(scenario, irb)
    if kind == JCC_FH:
        return JccFiniteHorizonController(scenario, irb)
    if kind == JCC_RHC:
        return JccRecedingController(scenario, irb)
    if kind == PCL_RHC:
        return PclRecedingController(scenario, irb)
    raise ValueError(f"unknown controller kind {kind!r}; expected one of {CONTROLLER_KINDS}")


@dataclass
class StepRecord:
    step: int
    control: float
    ego_s: float
    ego_v: float
    budget: float
    planned_risk: float
    risk_subtracted: float
    feasible: bool
    collided: bool
    cost_increment: float
    min_agent_distance: float


@dataclass
class EpisodeTrace:
    kind: str
    seed: int
    records: list[StepRecord] = field(default_factory=list)
    collided: bool = False
    reached_goal: bool = False
    total_cost: float = 0.0
    first_solve_infeasible: bool = False
    # Footprint overlap while the ego stood still. A stationary ego is
    # outside the collision set (passive safety), so this is not a safety
    # violation of the ego's policy; tracked for scenario diagnostics.
    struck_while_stopped: bool = False


def _true_footprint_corners(scenario: Scenario, s: float) -> list[np.ndarray]:
    out = []
    for fp in scenario.ego_footprints:
        base = min(max(s + fp.offset, 0.0), scenario.path.length)
        x, y, h = scenario.path.pose_at(base)
        out.append(rect_corners(x, y, h, fp.length, fp.width))
    return out


def _agent_corners(scenario: Scenario, agent_idx: int, position: np.ndarray,
                   heading: float) -> list[np.ndarray]:
    out = []
    for fp in scenario.agents[agent_idx].footprints:
        cx = position[0] + fp.offset * math.cos(heading)
        cy = position[1] + fp.offset * math.sin(heading)
        out.append(rect_corners(cx, cy, heading, fp.length, fp.width))
    return out


def run_episode(
    kind: str,
    scenario: Scenario,
    irb: IRB,
    seed: int,
    ground_truth: GroundTruth | None = None,
    noise_scale: float = 1.0,
) -> EpisodeTrace:
    """Simulate one closed-loop episode and record its trace.

    Agent trajectories and the realized ego start are sampled from the same
    distributions the planner models (unless noise_scale inflates them).
    Collision ground truth is exact rectangle overlap of realized footprints;
    the episode ends at the horizon, at the goal, or at the first collision.
    """
    gt = ground_truth if ground_truth is not None else sample_ground_truth(
        scenario, seed, noise_scale)
    wmodel = scenario.world_model()
    controller = make_controller(kind, scenario, irb)
    trace = EpisodeTrace(kind=kind, seed=seed)

    true_state = gt.ego_start
    belief = scenario.initial_belief(true_state)
    goal = scenario.goal_s

    for k in range(scenario.horizon):
        if true_state.s >= goal:
            trace.reached_goal = True
            break
        decision = controller.step(belief)
        if k == 0 and not decision.feasible:
            trace.first_solve_infeasible = True
            log.warning("%s: first solve infeasible at seed %d", kind, seed)
        u = decision.control

        advanced = advance_saturated(true_state, u, scenario.dt, scenario.path,
                                     scenario.v_max)
        moved = true_state.v > 0.0 or advanced.v > 0.0
        if moved and advanced.v > 0.0:
            s1 = float(np.clip(advanced.s + gt.ego_noise[k, 0], 0.0, scenario.path.length))
            v1 = float(np.clip(advanced.v + gt.ego_noise[k, 1], 0.0, scenario.v_max))
        elif moved:
            s1 = float(np.clip(advanced.s + gt.ego_noise[k, 0], 0.0, scenario.path.length))
            v1 = 0.0
        else:
            s1, v1 = advanced.s, advanced.v
        true_state = EgoKinematicState(s=s1, v=v1)

        ego_rects = _true_footprint_corners(scenario, true_state.s)
        overlap = False
        min_dist = math.inf
        ex, ey, _ = scenario.path.pose_at(min(true_state.s, scenario.path.length))
        for a in range(len(scenario.agents)):
            pos = gt.agent_tracks[a][k + 1]
            heading = gt.agent_headings[a][k + 1]
            min_dist = min(min_dist, math.hypot(pos[0] - ex, pos[1] - ey))
            for rect in _agent_corners(scenario, a, pos, heading):
                if any(rects_overlap(er, rect) for er in ego_rects):
                    overlap = True
        if not scenario.agents:
            min_dist = math.nan
        # The collision set excludes a stationary ego (passive safety), so an
        # overlap only counts against the policy while the ego is moving.
        collided = overlap and true_state.v > 0.0
        if overlap and true_state.v == 0.0:
            trace.struck_while_stopped = True

        # Every executed step starts short of the goal, so it costs dt.
        cost_inc = scenario.dt
        trace.total_cost += cost_inc
        budget = controller.ledger.rho if controller.ledger is not None else math.nan
        trace.records.append(StepRecord(
            step=k, control=u, ego_s=true_state.s, ego_v=true_state.v,
            budget=budget, planned_risk=decision.planned_risk,
            risk_subtracted=decision.subtracted, feasible=decision.feasible,
            collided=collided, cost_increment=cost_inc,
            min_agent_distance=min_dist,
        ))
        if collided:
            trace.collided = True
            break
        obs = WorldObservation(
            ego=true_state,
            agent_positions=np.array([gt.agent_tracks[a][k + 1]
                                      for a in range(len(scenario.agents))]).reshape(-1, 2),
        )
        belief = bayes_update(belief, u, obs, wmodel)
        if true_state.s >= goal:
            trace.reached_goal = True
            break

    if true_state.s >= goal:
        trace.reached_goal = True
    else:
        trace.total_cost += (goal - true_state.s) / scenario.v_max
    if controller.ledger is not None:
        controller.ledger.verify()
    return trace
