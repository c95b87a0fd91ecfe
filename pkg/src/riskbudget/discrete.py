"""Finite-state models with exact policy-risk enumeration.

These small fully-enumerable models provide ground truth the continuous
machinery cannot: the exact probability that a policy ever enters a collision
state, computed by walking the full observation tree. They back the golden
racetrack example, the per-step-mass dominance checks, and a mechanized
verification that the budgeted controller meets its interval risk bound on
randomized instances.

Per-step risk is accounted as first-entry mass (probability of entering a
collision state at that step, having avoided collision so far), matching how
the planning constraints meter risk; per-step occupancy (probability of being
in a collision state, which re-counts absorbed mass) is also reported since
its sum is the literal union bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ModelTooLargeError

NODE_CAP = 1_000_000
_PRUNE = 1e-15


@dataclass(frozen=True)
class DiscreteCCPOMDP:
    """Finite chance-constrained POMDP with absorbing collision states."""

    transitions: np.ndarray          # (U, X, X) rows p(x'|x, u)
    obs_kernel: np.ndarray           # (X, Y) rows p(y|x)
    b0: np.ndarray                   # (X,)
    horizon: int
    coll: np.ndarray                 # (X,) bool
    step_costs: np.ndarray           # (U, X)
    stop_control: int | None = None  # control reaching/holding the stopped set
    stopped: np.ndarray | None = None  # (X,) bool, deterministic-zero-velocity states
    controls: tuple[str, ...] = ()
    observations: tuple[str, ...] = ()

    def __post_init__(self):
        n_u, n_x, n_x2 = self.transitions.shape
        if n_x != n_x2:
            raise ValueError("transition kernel must be square per control")
        row_sums = self.transitions.sum(axis=2)
        if np.abs(row_sums - 1.0).max() > 1e-12:
            raise ValueError("transition rows must be stochastic to 1e-12")
        if np.abs(self.obs_kernel.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("observation rows must be stochastic to 1e-12")
        if abs(self.b0.sum() - 1.0) > 1e-12:
            raise ValueError("initial belief must sum to 1")
        for u in range(n_u):
            block = self.transitions[u][self.coll]
            if not np.allclose(block, np.eye(n_x)[self.coll], atol=1e-12):
                raise ValueError("collision states must be absorbing under every control")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_controls(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_observations(self) -> int:
        return self.obs_kernel.shape[1]

    def to_dict(self) -> dict:
        return {
            "transitions": self.transitions.tolist(),
            "obs_kernel": self.obs_kernel.tolist(),
            "b0": self.b0.tolist(),
            "horizon": int(self.horizon),
            "coll": self.coll.astype(int).tolist(),
            "step_costs": self.step_costs.tolist(),
            "stop_control": self.stop_control,
            "stopped": None if self.stopped is None else self.stopped.astype(int).tolist(),
            "controls": list(self.controls),
            "observations": list(self.observations),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteCCPOMDP":
        return cls(
            transitions=np.array(data["transitions"], dtype=float),
            obs_kernel=np.array(data["obs_kernel"], dtype=float),
            b0=np.array(data["b0"], dtype=float),
            horizon=int(data["horizon"]),
            coll=np.array(data["coll"], dtype=bool),
            step_costs=np.array(data["step_costs"], dtype=float),
            stop_control=data.get("stop_control"),
            stopped=None if data.get("stopped") is None else np.array(data["stopped"], dtype=bool),
            controls=tuple(data.get("controls", ())),
            observations=tuple(data.get("observations", ())),
        )


def open_loop_propagate(model: DiscreteCCPOMDP, belief: np.ndarray, u: int) -> np.ndarray:
    """Observation-free belief propagation: one transition-matrix product."""
    return model.transitions[u].T @ belief


@dataclass
class PolicyRiskProfile:
    """Exact risk with its per-step decomposition."""

    exact_risk: float
    entry_masses: np.ndarray    # (T+1,) first-entry collision mass per step
    occupancy: np.ndarray       # (T+1,) collision occupancy per step
    nodes: int = 0


def exact_policy_profile(model: DiscreteCCPOMDP, policy) -> PolicyRiskProfile:
    """Enumerate the full observation tree under `policy`.

    `policy(step, history, belief)` maps the current step, the observation
    history (tuple of observation indices) and the normalized posterior belief
    to a control index. Branches with probability below 1e-15 are pruned;
    trees beyond NODE_CAP nodes raise ModelTooLargeError.
    """
    T = model.horizon
    entry = np.zeros(T + 1)
    occupancy = np.zeros(T + 1)
    safe = ~model.coll
    entry[0] = occupancy[0] = model.b0[model.coll].sum()
    counter = {"nodes": 0}

    def recurse(step: int, history: tuple, full: np.ndarray, survivor: np.ndarray):
        counter["nodes"] += 1
        if counter["nodes"] > NODE_CAP:
            raise ModelTooLargeError(f"enumeration exceeded {NODE_CAP} nodes")
        if step == T:
            return
        total = full.sum()
        u = policy(step, history, full / total)
        kernel = model.transitions[u].T
        full_next = kernel @ full
        survivor_next = kernel @ survivor
        entry[step + 1] += survivor_next[model.coll].sum()
        occupancy[step + 1] += full_next[model.coll].sum()
        survivor_next = survivor_next * safe
        for y in range(model.n_observations):
            f_y = model.obs_kernel[:, y] * full_next
            if f_y.sum() < _PRUNE:
                continue
            s_y = model.obs_kernel[:, y] * survivor_next
            recurse(step + 1, history + (y,), f_y, s_y)

    recurse(0, (), model.b0.copy(), model.b0 * safe)
    return PolicyRiskProfile(
        exact_risk=float(entry.sum()),
        entry_masses=entry,
        occupancy=occupancy,
        nodes=counter["nodes"],
    )


def exact_policy_risk(model: DiscreteCCPOMDP, policy) -> float:
    """Exact probability of ever entering a collision state under `policy`."""
    return exact_policy_profile(model, policy).exact_risk


def sequence_policy(controls):
    """Policy executing a fixed control sequence regardless of observations."""
    seq = list(controls)

    def policy(step, history, belief):
        return seq[step]

    return policy


def open_loop_step_masses(model: DiscreteCCPOMDP, controls) -> np.ndarray:
    """First-entry collision mass per step under open-loop propagation."""
    masses = np.zeros(len(controls) + 1)
    survivor = model.b0 * ~model.coll
    masses[0] = model.b0[model.coll].sum()
    for i, u in enumerate(controls):
        survivor = model.transitions[u].T @ survivor
        masses[i + 1] = survivor[model.coll].sum()
        survivor = survivor * ~model.coll
    return masses


def umdp_transform_check(model: DiscreteCCPOMDP, controls) -> tuple[float, float]:
    """(open-loop risk bound, exact risk) for a fixed control sequence.

    The bound sums the per-step collision masses of the open-loop belief; the
    exact risk enumerates the sequence as a policy. The bound never falls
    below the exact risk.
    """
    if len(controls) != model.horizon:
        raise ValueError("control sequence must span the full horizon")
    bound = float(open_loop_step_masses(model, controls).sum())
    exact = exact_policy_risk(model, sequence_policy(controls))
    return bound, exact


def racetrack_model() -> DiscreteCCPOMDP:
    """Two consecutive sharp curves with a fast/slow choice at each.

    Taking the curves fast (100 then 90 mph) risks a 10% crash at each; the
    slow 70 mph option is risk-free. Outcomes (safe/crash) are observed after
    each curve and crashes are absorbing. Step costs are the speed given up
    relative to the fast option, so faster policies are cheaper.
    """
    START, MID, DONE, CRASH = 0, 1, 2, 3
    n = 4
    slow = np.eye(n)
    slow[START] = 0.0
    slow[START, MID] = 1.0
    slow[MID] = 0.0
    slow[MID, DONE] = 1.0
    fast = np.eye(n)
    fast[START] = 0.0
    fast[START, MID], fast[START, CRASH] = 0.9, 0.1
    fast[MID] = 0.0
    fast[MID, DONE], fast[MID, CRASH] = 0.9, 0.1
    transitions = np.stack([slow, fast])
    obs = np.zeros((n, 2))
    obs[[START, MID, DONE], 0] = 1.0   # observed safe
    obs[CRASH, 1] = 1.0                # observed crash
    b0 = np.zeros(n)
    b0[START] = 1.0
    coll = np.zeros(n, dtype=bool)
    coll[CRASH] = True
    costs = np.zeros((2, n))
    costs[0, START] = 30.0  # 70 instead of 100
    costs[0, MID] = 20.0    # 70 instead of 90
    return DiscreteCCPOMDP(
        transitions=transitions,
        obs_kernel=obs,
        b0=b0,
        horizon=2,
        coll=coll,
        step_costs=costs,
        controls=("slow", "fast"),
        observations=("safe", "crash"),
    )


def racetrack_greedy_policy(step, history, belief):
    """Hard-coded two-curve policy: fast at curve one, and fast again at curve
    two whenever the first curve was survived."""
    if step == 0:
        return 1
    return 1 if history[-1] == 0 else 0


@dataclass
class DiscreteSolveResult:
    controls: list[int]
    cost: float
    risk_terms: np.ndarray   # per-step g + g_stop terms, steps k+1..k+n
    total_risk: float


def discrete_solve(
    model: DiscreteCCPOMDP,
    belief: np.ndarray,
    rho: float,
    horizon: int,
    include_stop: bool = True,
) -> DiscreteSolveResult | None:
    """Constrained enumeration over open-loop control sequences.

    Minimizes expected cost subject to the summed per-step risk terms
    (first-entry collision mass, plus the one-step emergency-stop mass when
    `include_stop`) not exceeding `rho`. Ties break toward the
    lexicographically smallest control sequence. Returns None if no sequence
    is feasible.
    """
    n_u = model.n_controls
    safe = ~model.coll
    best: tuple[float, list[int]] | None = None
    best_terms: np.ndarray | None = None

    def stop_mass(survivor: np.ndarray) -> float:
        if not include_stop or model.stop_control is None:
            return 0.0
        pushed = model.transitions[model.stop_control].T @ survivor
        return float(pushed[model.coll].sum())

    def recurse(depth, controls, full, survivor, cost, terms):
        nonlocal best, best_terms
        if depth == horizon:
            total = float(np.sum(terms))
            if total <= rho + 1e-15:
                key = (cost, controls)
                if best is None or key < best:
                    best = key
                    best_terms = np.array(terms)
            return
        for u in range(n_u):
            cost_u = cost + float(model.step_costs[u] @ full)
            full_u = model.transitions[u].T @ full
            survivor_u = model.transitions[u].T @ survivor
            enter = float(survivor_u[model.coll].sum())
            survivor_u = survivor_u * safe
            term = enter + stop_mass(survivor_u)
            recurse(depth + 1, controls + [u], full_u, survivor_u, cost_u, terms + [term])

    recurse(0, [], belief.copy(), belief * safe, 0.0, [])
    if best is None:
        return None
    return DiscreteSolveResult(
        controls=best[1],
        cost=best[0],
        risk_terms=best_terms,
        total_risk=float(best_terms.sum()),
    )


def is_stopped_belief(model: DiscreteCCPOMDP, belief: np.ndarray) -> bool:
    """All non-collision mass rests on designated stopped states."""
    if model.stopped is None:
        return False
    live = belief * ~model.coll
    return float(live[~model.stopped].sum()) <= 1e-12


class BudgetedDiscretePolicy:
    """Risk-budgeted receding-horizon controller on a discrete model.

    Carries a per-history risk budget: each feasible solve subtracts its
    first-step risk terms, infeasible steps fall back to the stop control
    with no subtraction, and the budget grows by delta every step.
    Usable directly as a policy for exact enumeration.
    """

    def __init__(self, model: DiscreteCCPOMDP, rho0: float, delta: float,
                 plan_horizon: int):
        self.model = model
        self.rho0 = rho0
        self.delta = delta
        self.plan_horizon = plan_horizon
        # history -> (belief, budget at decision, control, budget after subtraction)
        self._cache: dict[tuple, tuple[np.ndarray, float, int, float]] = {}

    def _bayes(self, belief: np.ndarray, u: int, y: int) -> np.ndarray:
        pushed = self.model.transitions[u].T @ belief
        post = self.model.obs_kernel[:, y] * pushed
        total = post.sum()
        return post / total if total > 0 else post

    def _node(self, history: tuple) -> tuple[np.ndarray, float, int, float]:
        if history in self._cache:
            return self._cache[history]
        if not history:
            belief, rho = self.model.b0.copy(), self.rho0
            step = 0
        else:
            parent_belief, _, parent_u, parent_after = self._node(history[:-1])
            step = len(history)
            belief = self._bayes(parent_belief, parent_u, history[-1])
            rho = parent_after + self.delta
        n = min(self.plan_horizon, self.model.horizon - step)
        result = discrete_solve(self.model, belief, rho, n, include_stop=True)
        if result is not None:
            control = result.controls[0]
            rho_after = rho - float(result.risk_terms[0])
        else:
            control = self.model.stop_control if self.model.stop_control is not None else 0
            rho_after = rho
        out = (belief, rho, control, rho_after)
        self._cache[history] = out
        return out

    def __call__(self, step, history, belief):
        return self._node(history)[2]


class JointChanceDiscretePolicy:
    """Receding-horizon controller with a fresh per-iteration chance constraint."""

    def __init__(self, model: DiscreteCCPOMDP, alpha_iter: float, plan_horizon: int,
                 include_stop: bool = False):
        self.model = model
        self.alpha_iter = alpha_iter
        self.plan_horizon = plan_horizon
        self.include_stop = include_stop
        self._cache: dict[tuple, tuple[np.ndarray, int]] = {}

    def _node(self, history: tuple) -> tuple[np.ndarray, int]:
        if history in self._cache:
            return self._cache[history]
        if not history:
            belief = self.model.b0.copy()
        else:
            parent_belief, parent_u = self._node(history[:-1])
            pushed = self.model.transitions[parent_u].T @ parent_belief
            post = self.model.obs_kernel[:, history[-1]] * pushed
            total = post.sum()
            belief = post / total if total > 0 else post
        step = len(history)
        n = min(self.plan_horizon, self.model.horizon - step)
        result = discrete_solve(self.model, belief, self.alpha_iter, n,
                                include_stop=self.include_stop)
        if result is not None:
            control = result.controls[0]
        elif self.model.stop_control is not None:
            control = self.model.stop_control
        else:
            control = 0
        out = (belief, control)
        self._cache[history] = out
        return out

    def __call__(self, step, history, belief):
        return self._node(history)[1]


def random_model(rng: np.random.Generator) -> tuple[DiscreteCCPOMDP, float, float, int]:
    """Random small model from a family satisfying the budgeted controller's
    structural assumptions, with a random (rho0, delta) bound and plan horizon.

    Structure: one absorbing crash state; one or two designated stopped
    states; a stop control that reaches a stopped state in one step (with
    some transit risk from moving states); one or two go controls with random
    transitions and crash probabilities. Go is cheap and waiting is costly,
    so the controller is pressed to spend its budget. The initial belief is
    resampled until the first solve is feasible (non-irrecoverable start).
    """
    while True:
        n_field = int(rng.integers(3, 7))
        n = n_field + 1
        crash = n_field
        n_go = int(rng.integers(1, 3))
        n_stopped = int(rng.integers(1, 3))
        stopped_states = rng.choice(n_field, size=n_stopped, replace=False)
        stopped = np.zeros(n, dtype=bool)
        stopped[stopped_states] = True

        transitions = np.zeros((1 + n_go, n, n))
        stop_row = transitions[0]
        for x in range(n_field):
            if stopped[x]:
                stop_row[x, x] = 1.0
            else:
                q = rng.uniform(0.0, 0.15)
                target = int(rng.choice(stopped_states))
                stop_row[x, crash] = q
                stop_row[x, target] = 1.0 - q
        stop_row[crash, crash] = 1.0
        for g in range(n_go):
            row = transitions[1 + g]
            for x in range(n_field):
                p_crash = rng.uniform(0.0, 0.25) if rng.random() < 0.6 else 0.0
                weights = rng.dirichlet(np.ones(n_field))
                row[x, :n_field] = weights * (1.0 - p_crash)
                row[x, crash] = p_crash
            row[crash, crash] = 1.0

        n_obs = int(rng.integers(2, 4))
        obs = rng.dirichlet(np.ones(n_obs), size=n)

        costs = np.zeros((1 + n_go, n))
        costs[0, :n_field] = rng.uniform(1.0, 3.0, size=n_field)
        for g in range(n_go):
            costs[1 + g, :n_field] = rng.uniform(0.0, 1.0, size=n_field)

        b0 = np.zeros(n)
        if rng.random() < 0.5:
            b0[int(rng.choice(stopped_states))] = 1.0
        else:
            live = rng.dirichlet(np.ones(n_field))
            b0[:n_field] = live

        coll = np.zeros(n, dtype=bool)
        coll[crash] = True
        model = DiscreteCCPOMDP(
            transitions=transitions,
            obs_kernel=obs,
            b0=b0,
            horizon=int(rng.integers(3, 7)),
            coll=coll,
            step_costs=costs,
            stop_control=0,
            stopped=stopped,
        )
        rho0 = float(rng.uniform(0.02, 0.3))
        delta = 0.0 if rng.random() < 0.5 else float(rng.uniform(0.0, 0.05))
        plan_horizon = int(rng.integers(1, 4))
        if discrete_solve(model, b0, rho0, min(plan_horizon, model.horizon)) is not None:
            return model, rho0, delta, plan_horizon
