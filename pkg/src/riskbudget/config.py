"""Run and scenario configuration: strict YAML parsing with full validation.

Configs are parsed strictly: unknown keys are rejected (with a nearest-key
suggestion) because a silently ignored typo in a risk parameter would change
what safety property a run actually checks.
"""

from __future__ import annotations

import difflib
import io
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .beliefs import AgentPattern
from .controllers import CONTROLLER_KINDS
from .errors import ConfigError
from .lattice import LatticeSpec
from .montecarlo import GUARANTEE, MODEL_MISMATCH
from .scenarios import AgentSpec, Scenario, builtin_scenarios
from .vehicle import EgoKinematicState, FootprintSpec, ReferencePath, StopParams

RUN_KEYS = {
    "scenario", "algorithms", "rho0", "delta", "trials", "seed", "out",
    "mode", "horizon", "plan_horizon", "s_resolution", "v_resolution",
    "disks_per_rect", "jobs",
}


@dataclass(frozen=True)
class RunConfig:
    """One Monte Carlo run: scenario selection, bound, scale, outputs."""

    scenario: str
    algorithms: tuple[str, ...] = ("rb-rhc",)
    rho0: float = 0.01
    delta: float = 0.0
    trials: int = 100
    seed: int = 0
    out: str = "results"
    mode: str = GUARANTEE
    horizon: int | None = None
    plan_horizon: int | None = None
    s_resolution: float | None = None
    v_resolution: float | None = None
    disks_per_rect: int | None = None
    jobs: int = 1

    def as_dict(self) -> dict:
        data = asdict(self)
        data["algorithms"] = list(self.algorithms)
        return data


def _suggest(key: str, allowed: set[str]) -> str | None:
    def norm(s: str) -> str:
        return s.lower().replace("_", "").replace("-", "")

    best, best_score = None, 0.5
    for cand in allowed:
        score = difflib.SequenceMatcher(None, norm(key), norm(cand)).ratio()
        prefix = 0
        for a, b in zip(key.lower(), cand.lower()):
            if a != b:
                break
            prefix += 1
        score += 0.1 * min(prefix, 4)
        if score > best_score:
            best, best_score = cand, score
    return best


def _reject_unknown(data: dict, allowed: set[str], context: str) -> None:
    for key in data:
        if key not in allowed:
            hint = _suggest(key, allowed)
            suggestion = f"; did you mean {hint!r}?" if hint else ""
            raise ConfigError(f"unknown key {key!r}{suggestion}", context)


def _require(data: dict, key: str, context: str):
    if key not in data:
        raise ConfigError(f"missing required key {key!r}", context)
    return data[key]


def run_config_from_dict(data: dict, context: str = "run config") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping at the top level", context)
    _reject_unknown(data, RUN_KEYS, context)
    cfg = RunConfig(
        scenario=str(_require(data, "scenario", context)),
        algorithms=tuple(data.get("algorithms", ["rb-rhc"])),
        rho0=float(data.get("rho0", 0.01)),
        delta=float(data.get("delta", 0.0)),
        trials=int(data.get("trials", 100)),
        seed=int(data.get("seed", 0)),
        out=str(data.get("out", "results")),
        mode=str(data.get("mode", GUARANTEE)),
        horizon=None if data.get("horizon") is None else int(data["horizon"]),
        plan_horizon=None if data.get("plan_horizon") is None else int(data["plan_horizon"]),
        s_resolution=None if data.get("s_resolution") is None else float(data["s_resolution"]),
        v_resolution=None if data.get("v_resolution") is None else float(data["v_resolution"]),
        disks_per_rect=None if data.get("disks_per_rect") is None else int(data["disks_per_rect"]),
        jobs=int(data.get("jobs", 1)),
    )
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    ctx = "run config"
    if not 0.0 <= cfg.rho0 <= 1.0:
        raise ConfigError(f"rho0 must be in [0, 1], got {cfg.rho0}", ctx)
    if cfg.delta < 0.0 or cfg.delta > 1.0:
        raise ConfigError(f"delta must be in [0, 1], got {cfg.delta}", ctx)
    if cfg.trials < 1:
        raise ConfigError(f"trials must be >= 1, got {cfg.trials}", ctx)
    if cfg.jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {cfg.jobs}", ctx)
    if cfg.mode not in (GUARANTEE, MODEL_MISMATCH):
        raise ConfigError(f"mode must be {GUARANTEE!r} or {MODEL_MISMATCH!r}, got {cfg.mode!r}", ctx)
    for algo in cfg.algorithms:
        if algo not in CONTROLLER_KINDS:
            hint = difflib.get_close_matches(algo, CONTROLLER_KINDS, n=1)
            suggestion = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ConfigError(f"unknown algorithm {algo!r}{suggestion}", ctx)
    if not cfg.algorithms:
        raise ConfigError("at least one algorithm required", ctx)
    if (cfg.horizon is not None and cfg.plan_horizon is not None
            and cfg.plan_horizon > cfg.horizon):
        raise ConfigError("plan_horizon must not exceed horizon", ctx)


def emit_run_config(cfg: RunConfig) -> str:
    """YAML text whose parse gives back an equal RunConfig."""
    return yaml.safe_dump(cfg.as_dict(), sort_keys=True)


def parse_run_config(text: str, context: str = "run config") -> RunConfig:
    try:
        data = yaml.safe_load(io.StringIO(text))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"malformed YAML{where}: {exc}", context) from exc
    return run_config_from_dict(data, context)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_run_config(path.read_text(), context=str(path))


def resolve_scenario(cfg: RunConfig) -> Scenario:
    """Builtin scenario by name, or a scenario file by path, with overrides."""
    builtins = builtin_scenarios()
    if cfg.scenario in builtins:
        scenario = builtins[cfg.scenario]()
    else:
        scenario = load_scenario(cfg.scenario)
    return apply_overrides(scenario, cfg)


def apply_overrides(scenario: Scenario, cfg: RunConfig) -> Scenario:
    lattice = scenario.lattice
    changed = {}
    if cfg.plan_horizon is not None:
        changed["plan_horizon"] = cfg.plan_horizon
    if cfg.s_resolution is not None:
        changed["s_resolution"] = cfg.s_resolution
    if cfg.v_resolution is not None:
        changed["v_resolution"] = cfg.v_resolution
    if changed:
        lattice = replace(lattice, **changed)
    fields = {}
    if cfg.horizon is not None:
        fields["horizon"] = cfg.horizon
    if cfg.disks_per_rect is not None:
        fields["disks_per_rect"] = cfg.disks_per_rect
    if changed:
        fields["lattice"] = lattice
    try:
        return replace(scenario, **fields) if fields else scenario
    except ValueError as exc:
        raise ConfigError(str(exc), "scenario overrides") from exc


SCENARIO_KEYS = {
    "name", "dt", "horizon", "goal_s", "v_max", "a_max", "u_stop", "path",
    "ego", "agents", "process_noise", "lattice", "disks_per_rect",
}
EGO_KEYS = {"footprints", "s0", "v0", "spread"}
FOOTPRINT_KEYS = {"length", "width", "offset"}
LATTICE_KEYS = {"s_resolution", "v_resolution", "plan_horizon", "accels"}
AGENT_KEYS = {"footprints", "patterns"}
PATTERN_KEYS = {"weight", "positions", "sigmas", "headings"}


def _footprint(data: dict, context: str) -> FootprintSpec:
    _reject_unknown(data, FOOTPRINT_KEYS, context)
    return FootprintSpec(
        length=float(_require(data, "length", context)),
        width=float(_require(data, "width", context)),
        offset=float(data.get("offset", 0.0)),
    )


def scenario_from_dict(data: dict, context: str = "scenario") -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping at the top level", context)
    _reject_unknown(data, SCENARIO_KEYS, context)
    dt = float(_require(data, "dt", context))
    horizon = int(_require(data, "horizon", context))
    v_max = float(_require(data, "v_max", context))
    u_stop = float(data.get("u_stop", 2.0))

    path_pts = np.asarray(_require(data, "path", context), dtype=float)
    try:
        path = ReferencePath(path_pts)
    except ValueError as exc:
        raise ConfigError(str(exc), f"{context}.path") from exc

    ego = _require(data, "ego", context)
    _reject_unknown(ego, EGO_KEYS, f"{context}.ego")
    footprints = tuple(_footprint(fp, f"{context}.ego.footprints[{i}]")
                       for i, fp in enumerate(_require(ego, "footprints", f"{context}.ego")))
    spread = tuple(float(x) for x in ego.get("spread", (0.0, 0.0)))
    if len(spread) != 2:
        raise ConfigError("ego.spread needs two entries (s, v)", context)

    lattice_data = data.get("lattice", {})
    _reject_unknown(lattice_data, LATTICE_KEYS, f"{context}.lattice")
    accels = tuple(float(a) for a in lattice_data.get(
        "accels", (-u_stop, -1.0, -0.5, 0.0, 0.5, 1.0)))
    lattice = LatticeSpec(
        s_resolution=float(lattice_data.get("s_resolution", 0.5)),
        v_resolution=float(lattice_data.get("v_resolution", 0.5)),
        plan_horizon=int(lattice_data.get("plan_horizon", horizon)),
        dt=dt,
        v_max=v_max,
        accels=accels,
        goal_s=float(_require(data, "goal_s", context)),
    )

    noise = data.get("process_noise", (0.05 ** 2, 0.05 ** 2))
    if len(noise) != 2:
        raise ConfigError("process_noise needs two entries (s, v)", context)

    agents = []
    for i, agent in enumerate(data.get("agents", [])):
        actx = f"{context}.agents[{i}]"
        _reject_unknown(agent, AGENT_KEYS, actx)
        agent_fps = tuple(_footprint(fp, f"{actx}.footprints[{j}]")
                          for j, fp in enumerate(_require(agent, "footprints", actx)))
        patterns = []
        for j, pat in enumerate(_require(agent, "patterns", actx)):
            pctx = f"{actx}.patterns[{j}]"
            _reject_unknown(pat, PATTERN_KEYS, pctx)
            positions = np.asarray(_require(pat, "positions", pctx), dtype=float)
            sigmas = np.asarray(_require(pat, "sigmas", pctx), dtype=float)
            if len(sigmas) != len(positions):
                raise ConfigError("sigmas must match positions length", pctx)
            headings = pat.get("headings")
            if headings is None:
                seg = np.diff(positions, axis=0)
                h = np.arctan2(seg[:, 1], seg[:, 0])
                # Zero-length tail segments hold the previous heading.
                lengths = np.hypot(seg[:, 0], seg[:, 1])
                for k in range(1, len(h)):
                    if lengths[k] < 1e-12:
                        h[k] = h[k - 1]
                headings = np.concatenate([h, h[-1:]])
            else:
                headings = np.asarray(headings, dtype=float)
            covs = np.einsum("i,jk->ijk", sigmas ** 2, np.eye(2))
            patterns.append(AgentPattern(
                weight=float(_require(pat, "weight", pctx)),
                means=positions, covs=covs, headings=headings,
            ))
        agents.append(AgentSpec(footprints=agent_fps, patterns=tuple(patterns)))

    try:
        return Scenario(
            name=str(data.get("name", "custom")),
            path=path, dt=dt, horizon=horizon,
            goal_s=float(_require(data, "goal_s", context)),
            ego_footprints=footprints,
            ego_start=EgoKinematicState(
                s=float(_require(ego, "s0", f"{context}.ego")),
                v=float(_require(ego, "v0", f"{context}.ego")),
            ),
            ego_spread=spread,
            v_max=v_max,
            a_max=float(data.get("a_max", 1.0)),
            stop=StopParams.from_limits(u_stop, v_max, dt),
            agents=tuple(agents),
            process_noise=np.diag([float(noise[0]), float(noise[1])]),
            lattice=lattice,
            disks_per_rect=int(data.get("disks_per_rect", 3)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), context) from exc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"malformed YAML{where}: {exc}", str(path)) from exc
    return scenario_from_dict(data, context=str(path))
