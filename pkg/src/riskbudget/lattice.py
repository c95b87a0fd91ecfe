"""Chance-constrained speed planning by graph search over a (s, v, step) lattice.

The planner expands a layered DAG of longitudinal states reachable under a
finite acceleration set, annotates every node with its risk contribution
(belief collision bound plus, optionally, the emergency-stop bound), and
solves the risk-constrained minimum-cost problem by Lagrangian relaxation:
backward dynamic programming on cost + lambda * risk with bisection on
lambda. A lexicographic minimum-risk search certifies infeasibility exactly.

Successors of the current belief are kept at their exact continuous states so
the first-step risk term of a returned plan equals the risk the executing
controller is charged; deeper layers snap to the lattice grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .beliefs import EgoBelief, WorldBelief, WorldModel, reweight_rows
from .errors import HorizonExhaustedError, PlanningGraphError
from .risk import CollisionModel, RiskEvaluator
from .vehicle import BRAKE_HOLD, EgoKinematicState

log = logging.getLogger(__name__)

LAMBDA_CAP = float(2 ** 60)
MAX_ITERATIONS = 100
BRACKET_RTOL = 1e-6


@dataclass(frozen=True)
class LatticeSpec:
    """Discretization of the (position, speed, step) planning space."""

    s_resolution: float
    v_resolution: float
    plan_horizon: int
    dt: float
    v_max: float
    accels: tuple[float, ...]
    goal_s: float

    def __post_init__(self):
        if self.s_resolution <= 0 or self.v_resolution <= 0:
            raise ValueError("lattice resolutions must be positive")
        if self.plan_horizon < 1:
            raise ValueError("plan horizon must be at least 1")
        if 0.0 not in self.accels:
            raise ValueError("acceleration set must contain 0")


@dataclass(frozen=True)
class EdgeAnnotation:
    """One lattice transition: control, step cost, successor risk."""

    control: float
    cost: float
    end_risk: float


@dataclass(frozen=True)
class SpeedPlan:
    """Open-loop speed plan with its predicted risk decomposition.

    step_risks[i] is the risk term of the state reached after i+1 controls;
    total_risk is their sum, which the planner guarantees does not exceed the
    budget it was solved under.
    """

    controls: tuple[float, ...]
    step_risks: np.ndarray
    total_risk: float
    cost: float
    beliefs: tuple[WorldBelief, ...]
    lam: float = 0.0
    duality_gap: float = 0.0

    def first_step_risk(self) -> float:
        return float(self.step_risks[0])


@dataclass
class _LayerEdges:
    parent: np.ndarray        # sorted ascending
    child: np.ndarray
    control: np.ndarray
    cost: np.ndarray
    starts: np.ndarray        # first edge index per parent
    child_risk: np.ndarray | None = None  # gathered once after annotation


@dataclass
class PlanningGraph:
    spec: LatticeSpec
    root: WorldBelief
    layer_s: list[np.ndarray]
    layer_v: list[np.ndarray]
    node_risk: list[np.ndarray]        # per layer 0..N (layer 0 unused, zeros)
    edges: list[_LayerEdges]           # transition i -> i+1
    weight_rows: list[np.ndarray]      # per agent: (N+1, n_patterns)
    var_s: np.ndarray                  # (N+1,) ego position variance per layer
    var_v: np.ndarray                  # (N+1,)

    @property
    def n_nodes(self) -> int:
        return sum(len(s) for s in self.layer_s)

    @property
    def n_edges(self) -> int:
        return sum(len(e.parent) for e in self.edges)


def _step_arrays(s, v, accel: float, dt: float, v_max: float, length: float):
    """Vectorized saturated longitudinal step; matches vehicle.advance_saturated."""
    v1 = v + accel * dt
    ds = 0.5 * (v + v1) * dt
    if accel < 0.0:
        stopping = v1 < 0.0
        if stopping.any():
            ds = np.where(stopping, v * v / (-2.0 * accel), ds)
            v1 = np.maximum(v1, 0.0)
        v1 = np.where(v1 <= BRAKE_HOLD, 0.0, v1)
    elif accel > 0.0:
        over = v1 > v_max
        if over.any():
            t_star = (v_max - v) / accel
            ds = np.where(over, 0.5 * (v + v_max) * t_star + v_max * (dt - t_star), ds)
            v1 = np.minimum(v1, v_max)
    return np.minimum(s + ds, length), v1


def expand_graph(
    belief: WorldBelief,
    spec: LatticeSpec,
    cmodel: CollisionModel,
    wmodel: WorldModel,
    update_rule: str = "pcl",
    first_step_open_loop: bool = True,
    include_stop_risk: bool = True,
) -> PlanningGraph:
    """Build the layered planning DAG from the current belief.

    Layer 0 holds the belief's ego state; each accel in the spec generates a
    successor per node, snapped to the lattice from layer 2 on. Mixture
    weights evolve per layer: frozen under the open-loop rule, reweighted
    toward the dominant pattern under "pcl" (the first transition stays
    open-loop unless first_step_open_loop is False). Node risk is the
    collision bound plus, when include_stop_risk, the emergency-stop bound
    with that layer's weights.
    """
    if update_rule not in ("pcl", "open_loop"):
        raise ValueError(f"unknown update rule {update_rule!r}")
    N = spec.plan_horizon
    k0 = belief.step
    stop = wmodel.stop
    needed = k0 + N + (stop.t_stop if include_stop_risk else 0)
    for patterns in belief.agents:
        for p in patterns:
            if len(p) <= needed:
                raise HorizonExhaustedError(
                    f"pattern covers steps [0, {len(p) - 1}], planning needs {needed}"
                )

    # Per-layer mixture weights (shared by all nodes in a layer: agents move
    # independently of the ego, so the heuristic reweighting depends only on
    # the number of elapsed steps).
    weight_rows = []
    for patterns in belief.agents:
        rows = np.empty((N + 1, len(patterns)))
        rows[0] = [p.weight for p in patterns]
        for i in range(1, N + 1):
            if update_rule == "open_loop" or (i == 1 and first_step_open_loop):
                rows[i] = rows[i - 1]
            else:
                rows[i] = reweight_rows(rows[i - 1], patterns, k0 + i,
                                        wmodel.agent_meas_cov)
        weight_rows.append(rows)

    q_s = wmodel.process_noise[0, 0]
    q_v = wmodel.process_noise[1, 1]
    var_s = belief.ego.cov[0, 0] + q_s * wmodel.dt * np.arange(N + 1)
    var_v = belief.ego.cov[1, 1] + q_v * wmodel.dt * np.arange(N + 1)

    length = wmodel.path.length
    n_s = int(np.floor(length / spec.s_resolution + 1e-9))
    n_v = int(np.floor(spec.v_max / spec.v_resolution + 1e-9))
    accels = np.array(spec.accels)
    order = np.argsort(np.abs(accels), kind="stable")
    accels = accels[order]

    layer_s = [np.array([belief.ego.mean.s])]
    layer_v = [np.array([belief.ego.mean.v])]
    edges: list[_LayerEdges] = []
    for i in range(N):
        s_par, v_par = layer_s[i], layer_v[i]
        n_par = len(s_par)
        cand_s, cand_v, cand_u, cand_parent = [], [], [], []
        for a in accels:
            s1, v1 = _step_arrays(s_par, v_par, float(a), spec.dt, spec.v_max, length)
            if i >= 1:
                s1 = np.rint(s1 / spec.s_resolution).clip(0, n_s) * spec.s_resolution
                v1 = np.rint(v1 / spec.v_resolution).clip(0, n_v) * spec.v_resolution
            cand_s.append(s1)
            cand_v.append(v1)
            cand_u.append(np.full(n_par, a))
            cand_parent.append(np.arange(n_par))
        cand_s = np.concatenate(cand_s)
        cand_v = np.concatenate(cand_v)
        cand_u = np.concatenate(cand_u)
        cand_parent = np.concatenate(cand_parent)

        if i >= 1:
            # Snapped coordinates dedupe exactly through integer cell keys.
            keys = (np.rint(cand_s / spec.s_resolution).astype(np.int64) * (n_v + 1)
                    + np.rint(cand_v / spec.v_resolution).astype(np.int64))
            uniq_keys, inverse = np.unique(keys, return_inverse=True)
            child_s = (uniq_keys // (n_v + 1)) * spec.s_resolution
            child_v = (uniq_keys % (n_v + 1)) * spec.v_resolution
        else:
            pairs = np.stack([cand_s, cand_v])
            uniq, inverse = np.unique(pairs, axis=1, return_inverse=True)
            child_s, child_v = uniq[0], uniq[1]

        cost = np.where(s_par[cand_parent] < spec.goal_s, spec.dt, 0.0)
        # Sort edges by (parent, -child v, |u|, child s): per-parent contiguity
        # for the DP reduction, with the deterministic tie-break baked into
        # the stable order. Progress-first tie-breaking (fastest successor
        # wins ties) keeps rolling replans from deferring acceleration forever
        # when several plans share the same arrival time.
        sort = np.lexsort((child_s[inverse], np.abs(cand_u), -child_v[inverse], cand_parent))
        parent_sorted = cand_parent[sort]
        starts = np.searchsorted(parent_sorted, np.arange(n_par))
        edges.append(_LayerEdges(
            parent=parent_sorted,
            child=inverse[sort],
            control=cand_u[sort],
            cost=cost[sort],
            starts=starts,
        ))
        layer_s.append(child_s)
        layer_v.append(child_v)

    node_risk = _annotate_nodes(
        layer_s, layer_v, weight_rows, var_s, cmodel, wmodel, belief,
        include_stop_risk,
    )
    for i, e in enumerate(edges):
        e.child_risk = node_risk[i + 1][e.child]
    return PlanningGraph(
        spec=spec, root=belief, layer_s=layer_s, layer_v=layer_v,
        node_risk=node_risk, edges=edges, weight_rows=weight_rows,
        var_s=var_s, var_v=var_v,
    )


def _annotate_nodes(layer_s, layer_v, weight_rows, var_s, cmodel, wmodel,
                    belief, include_stop_risk) -> list[np.ndarray]:
    """Risk annotation for every node: one flat batched bound evaluation.

    The stop contribution sums the collision bound over the deceleration
    rollout from each node, skipping steps where the rollout has already
    reached rest (a stopped ego is risk-free under passive safety). Weights
    stay frozen at the node's layer during the rollout.
    """
    k0 = belief.step
    stop = wmodel.stop
    q_s = wmodel.process_noise[0, 0]
    dt = wmodel.dt
    length = wmodel.path.length
    evaluator = RiskEvaluator(cmodel, belief.agents)

    qs_s, qs_var, qs_step, qs_row = [], [], [], []
    scatter: list[tuple[int, np.ndarray, slice]] = []  # (layer, node indices, query slice)
    cursor = 0
    n_layers = len(layer_s)
    for i in range(1, n_layers):
        s_i, v_i = layer_s[i], layer_v[i]
        moving = np.flatnonzero(v_i > 0.0)  # stopped nodes carry zero risk
        n_i = len(moving)
        if n_i:
            qs_s.append(s_i[moving])
            qs_var.append(np.full(n_i, var_s[i]))
            qs_step.append(np.full(n_i, k0 + i, dtype=int))
            qs_row.append(np.full(n_i, i, dtype=int))
            scatter.append((i, moving, slice(cursor, cursor + n_i)))
            cursor += n_i
        if not include_stop_risk:
            continue
        for tau in range(1, stop.t_stop + 1):
            # Steps where the emergency-stop rollout is still moving (the
            # brake hold ends it at or below BRAKE_HOLD).
            v_tau = v_i - tau * stop.u_stop * dt
            active = np.flatnonzero(v_tau > BRAKE_HOLD)
            if not len(active):
                break
            d = v_i[active] * tau * dt - 0.5 * stop.u_stop * (tau * dt) ** 2
            qs_s.append(np.minimum(s_i[active] + d, length))
            qs_var.append(np.full(len(active), var_s[i] + tau * q_s * dt))
            qs_step.append(np.full(len(active), k0 + i + tau, dtype=int))
            qs_row.append(np.full(len(active), i, dtype=int))
            scatter.append((i, active, slice(cursor, cursor + len(active))))
            cursor += len(active)

    node_risk = [np.zeros(len(s)) for s in layer_s]
    if cursor == 0 or not belief.agents:
        return node_risk
    risks = evaluator.evaluate(
        s=np.concatenate(qs_s),
        var_s=np.concatenate(qs_var),
        step=np.concatenate(qs_step),
        row_idx=np.concatenate(qs_row),
        weight_rows=weight_rows,
        stopped=np.zeros(cursor, dtype=bool),
    )
    for layer, nodes, sl in scatter:
        # Node indices are unique within each scatter group.
        node_risk[layer][nodes] += risks[sl]
    for r in node_risk:
        np.clip(r, 0.0, 1.0, out=r)
    return node_risk


@dataclass
class _PlanPath:
    controls: list[float]
    node_trail: list[int]
    step_risks: np.ndarray
    cost: float

    @property
    def total_risk(self) -> float:
        return float(self.step_risks.sum())


def _final_costs(graph: PlanningGraph) -> np.ndarray:
    s_end = graph.layer_s[-1]
    return np.maximum(0.0, graph.spec.goal_s - s_end) / graph.spec.v_max


def _extract(graph: PlanningGraph, best_edges: list[np.ndarray]) -> _PlanPath:
    node = 0
    controls, trail, risks, cost = [], [0], [], 0.0
    for i, edge_set in enumerate(graph.edges):
        e = best_edges[i][node]
        controls.append(float(edge_set.control[e]))
        cost += float(edge_set.cost[e])
        node = int(edge_set.child[e])
        trail.append(node)
        risks.append(graph.node_risk[i + 1][node])
    cost += float(_final_costs(graph)[node])
    return _PlanPath(controls=controls, node_trail=trail,
                     step_risks=np.array(risks), cost=cost)


def search_with_lambda(graph: PlanningGraph, lam: float) -> _PlanPath:
    """Minimize cost + lam * risk by backward DP over the layered graph.

    Ties break to the edge ordering fixed at expansion: highest successor
    speed, then lowest control magnitude, then lowest successor position.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if not graph.edges:
        raise PlanningGraphError("graph has no transitions")
    value = _final_costs(graph)
    best_edges: list[np.ndarray] = [None] * len(graph.edges)
    for i in range(len(graph.edges) - 1, -1, -1):
        e = graph.edges[i]
        edge_val = e.cost + lam * e.child_risk + value[e.child]
        seg_min = np.minimum.reduceat(edge_val, e.starts)
        hit = np.flatnonzero(edge_val == seg_min[e.parent])
        best = hit[_first_per_parent(e.parent[hit])]
        best_edges[i] = best
        value = edge_val[best]
    return _extract(graph, best_edges)


def _first_per_parent(parents_sorted: np.ndarray) -> np.ndarray:
    """Indices of the first entry of each parent run in a sorted parent array."""
    mask = np.empty(len(parents_sorted), dtype=bool)
    mask[0] = True
    np.not_equal(parents_sorted[1:], parents_sorted[:-1], out=mask[1:])
    return np.flatnonzero(mask)


def search_min_risk(graph: PlanningGraph) -> _PlanPath:
    """Lexicographic (total risk, cost) minimization; certifies feasibility."""
    risk_val = np.zeros(len(graph.layer_s[-1]))
    cost_val = _final_costs(graph)
    best_edges: list[np.ndarray] = [None] * len(graph.edges)
    for i in range(len(graph.edges) - 1, -1, -1):
        e = graph.edges[i]
        edge_risk = e.child_risk + risk_val[e.child]
        edge_cost = e.cost + cost_val[e.child]
        # lexsort output is stable, so the construction-time tie order stands.
        sort = np.lexsort((edge_cost, edge_risk, e.parent))
        best = sort[_first_per_parent(e.parent[sort])]
        best_edges[i] = best
        risk_val = edge_risk[best]
        cost_val = edge_cost[best]
    return _extract(graph, best_edges)


def _materialize(graph: PlanningGraph, path: _PlanPath, lam: float,
                 gap: float) -> SpeedPlan:
    """Attach predicted beliefs to a DP path and freeze it as a SpeedPlan."""
    beliefs = []
    k0 = graph.root.step
    for i in range(1, len(graph.layer_s)):
        node = path.node_trail[i]
        s = float(graph.layer_s[i][node])
        v = float(graph.layer_v[i][node])
        cov = np.diag([graph.var_s[i], graph.var_v[i] if v > 0.0 else 0.0])
        agents = tuple(
            tuple(replace(p, weight=float(graph.weight_rows[a][i, j]))
                  for j, p in enumerate(patterns))
            for a, patterns in enumerate(graph.root.agents)
        )
        beliefs.append(WorldBelief(
            ego=EgoBelief(mean=EgoKinematicState(s=s, v=v), cov=cov),
            agents=agents,
            step=k0 + i,
        ))
    return SpeedPlan(
        controls=tuple(path.controls),
        step_risks=path.step_risks,
        total_risk=path.total_risk,
        cost=path.cost,
        beliefs=tuple(beliefs),
        lam=lam,
        duality_gap=gap,
    )


def solve_chance_constrained(
    belief: WorldBelief,
    rho: float,
    spec: LatticeSpec,
    cmodel: CollisionModel,
    wmodel: WorldModel,
    update_rule: str = "pcl",
    tol: float = 1e-9,
    first_step_open_loop: bool = True,
    include_stop_risk: bool = True,
    graph: PlanningGraph | None = None,
) -> SpeedPlan | None:
    """Lowest-cost plan whose total risk stays within the budget rho.

    Runs the unconstrained search first; if its risk exceeds rho, brackets
    the Lagrange multiplier by doubling, then narrows the bracket by querying
    the multiplier where the two bracket plans' penalized values intersect.
    Penalty plans are piecewise-constant in the multiplier, so this converges
    exactly: when the intersection query reproduces a bracket plan, no plan
    lies between them and the threshold is found. Stops early once the
    duality gap falls below tol, and always within the iteration cap.
    Returns None only when the exact minimum-risk plan violates the budget;
    the returned plan always satisfies total_risk <= rho.
    """
    if rho < 0:
        raise ValueError("risk budget must be nonnegative")
    if graph is None:
        graph = expand_graph(belief, spec, cmodel, wmodel, update_rule,
                             first_step_open_loop, include_stop_risk)

    trace: list[tuple[float, float, float]] = []

    def run(lam: float) -> _PlanPath:
        path = search_with_lambda(graph, lam)
        trace.append((lam, path.total_risk, path.cost))
        return path

    plan0 = run(0.0)
    if plan0.total_risk <= rho:
        _check_monotone(trace)
        return _materialize(graph, plan0, 0.0, 0.0)

    min_risk = search_min_risk(graph)
    if min_risk.total_risk > rho:
        return None

    # Bracket: lambda=0 infeasible, grow until a feasible penalty plan appears.
    lo, lo_path = 0.0, plan0
    hi, hi_path = None, None
    lam = 1.0
    iterations = 0
    while lam <= LAMBDA_CAP and iterations < MAX_ITERATIONS:
        path = run(lam)
        iterations += 1
        if path.total_risk <= rho:
            hi, hi_path = lam, path
            break
        lo, lo_path = lam, path
        lam *= 2.0
    if hi is None:
        # Penalty search never crossed; fall back to the certified plan.
        log.debug("lambda cap reached; returning minimum-risk plan")
        _check_monotone(trace)
        return _materialize(graph, min_risk, LAMBDA_CAP, float("nan"))

    best = hi_path
    dual = lo_path.cost + lo * (lo_path.total_risk - rho)
    while iterations < MAX_ITERATIONS:
        if best.cost - dual <= tol:
            break
        if hi - lo <= BRACKET_RTOL * hi:
            break
        risk_gap = lo_path.total_risk - hi_path.total_risk
        if risk_gap <= 0.0:
            break
        lam = (hi_path.cost - lo_path.cost) / risk_gap
        if not lo < lam < hi:
            lam = 0.5 * (lo + hi)
        path = run(lam)
        iterations += 1
        same_lo = path.cost == lo_path.cost and path.total_risk == lo_path.total_risk
        same_hi = path.cost == hi_path.cost and path.total_risk == hi_path.total_risk
        if path.total_risk <= rho:
            hi, hi_path = lam, path
            if (path.cost, path.total_risk) < (best.cost, best.total_risk):
                best = path
        else:
            lo, lo_path = lam, path
            dual = max(dual, path.cost + lam * (path.total_risk - rho))
        if same_lo or same_hi:
            # The bracket plans are adjacent plateaus; the threshold is exact.
            dual = max(dual, lo_path.cost + lam * (lo_path.total_risk - rho))
            break
    _check_monotone(trace)
    gap = max(0.0, best.cost - dual)
    if gap > tol:
        log.debug("duality gap %.3g at lambda in [%.3g, %.3g]", gap, lo, hi)
    assert best.total_risk <= rho
    return _materialize(graph, best, hi, gap)


def _check_monotone(trace: list[tuple[float, float, float]]) -> None:
    """Penalty plans must trade risk for cost monotonically in lambda."""
    if len(trace) < 2:
        return
    ordered = sorted(trace)
    for (l1, r1, c1), (l2, r2, c2) in zip(ordered, ordered[1:]):
        assert r2 <= r1 + 1e-12, f"risk increased along lambda: {(l1, r1)} -> {(l2, r2)}"
        assert c2 >= c1 - 1e-12, f"cost decreased along lambda: {(l1, c1)} -> {(l2, c2)}"
