"""Command-line front end: run Monte Carlo experiments, verify oracles,
list scenarios.

Exit codes: 0 success, 1 verification or harness failure, 2 configuration
error. All output files are byte-deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from . import __version__
from .config import (RunConfig, emit_run_config, load_run_config,
                     resolve_scenario)
from .controllers import IRB
from .errors import ConfigError
from .montecarlo import TrialResult, run_monte_carlo
from .scenarios import builtin_scenarios
from .verification import run_all_checks

OUT_ENV_VAR = "RISKBUDGET_OUT"


def _fmt(value: float) -> str:
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def write_outputs(out_dir: Path, cfg: RunConfig, summary, results: list[TrialResult]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "trials.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "algorithm", "collided", "cost", "steps"])
        for r in results:
            writer.writerow([r.seed, r.kind, int(r.collided), _fmt(r.cost), r.steps])

    for kind in cfg.algorithms:
        name = f"budget_trace_{kind.replace('-', '_')}.csv"
        with open(out_dir / name, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["seed", "step", "rho", "planned_risk", "min_agent_distance"])
            for r in results:
                if r.kind != kind or r.error is not None:
                    continue
                for step in range(r.steps):
                    writer.writerow([
                        r.seed, step,
                        _fmt(r.budget_trace[step]),
                        _fmt(r.planned_risk_trace[step]),
                        _fmt(r.min_distance_trace[step]),
                    ])

    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    manifest = {"version": __version__, "config": cfg.as_dict()}
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(cfg: RunConfig) -> int:
    scenario = resolve_scenario(cfg)
    irb = IRB(rho0=cfg.rho0, delta=cfg.delta,
              horizon=cfg.horizon if cfg.horizon is not None else scenario.horizon)
    summary, results = run_monte_carlo(
        scenario, list(cfg.algorithms), irb, cfg.trials, cfg.seed,
        mode=cfg.mode, jobs=cfg.jobs,
    )
    out_dir = Path(os.environ.get(OUT_ENV_VAR, cfg.out))
    write_outputs(out_dir, cfg, summary, results)
    for kind, stats in sorted(summary.kinds.items()):
        print(f"{kind}: collision rate {stats.collision_rate:.4f} "
              f"+/- {stats.collision_rate_se:.4f}, mean cost {stats.mean_cost:.3f} "
              f"+/- {stats.mean_cost_se:.3f} ({stats.trials} trials)")
    print(f"results written to {out_dir}")
    return 0


def cmd_verify() -> int:
    checks = run_all_checks()
    width = max(len(c.name) for c in checks)
    failed = 0
    for check in checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status}  {check.name:<{width}}  {check.detail}")
        failed += not check.passed
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


def cmd_scenarios_list() -> int:
    for name, factory in sorted(builtin_scenarios().items()):
        scenario = factory()
        print(f"{name}: horizon {scenario.horizon} steps, "
              f"{len(scenario.agents)} agent(s), goal at {scenario.goal_s} m")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskbudget",
        description="Risk-budgeted speed planning experiments",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a Monte Carlo experiment")
    run_p.add_argument("--config", required=True, help="YAML run config")
    run_p.add_argument("--algorithms", help="comma-separated controller list")
    run_p.add_argument("--trials", type=int, help="number of trials")
    run_p.add_argument("--seed", type=int, help="base seed")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--jobs", type=int, help="parallel worker processes")

    sub.add_parser("verify", help="run the oracle verification suite")

    scen_p = sub.add_parser("scenarios", help="scenario utilities")
    scen_sub = scen_p.add_subparsers(dest="scenario_command", required=True)
    scen_sub.add_parser("list", help="list builtin scenarios")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_run_config(args.config)
            overrides = {}
            if args.algorithms:
                overrides["algorithms"] = tuple(args.algorithms.split(","))
            if args.trials is not None:
                overrides["trials"] = args.trials
            if args.seed is not None:
                overrides["seed"] = args.seed
            if args.out is not None:
                overrides["out"] = args.out
            if args.jobs is not None:
                overrides["jobs"] = args.jobs
            if overrides:
                from dataclasses import replace
                from .config import validate_run_config
                cfg = replace(cfg, **overrides)
                validate_run_config(cfg)
            return cmd_run(cfg)
        if args.command == "verify":
            return cmd_verify()
        if args.command == "scenarios" and args.scenario_command == "list":
            return cmd_scenarios_list()
        parser.error("unknown command")
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # harness failures carry exit code 1
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
