import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from riskbudget.cli import main
from riskbudget.config import (emit_run_config, load_scenario, parse_run_config,
                               resolve_scenario, run_config_from_dict,
                               scenario_from_dict)
from riskbudget.errors import ConfigError
from riskbudget.verification import check_disk_bound_mc


BASE = {"scenario": "clear_road", "trials": 3, "seed": 5,
        "algorithms": ["rb-rhc"]}


class TestRunConfig:
    def test_defaults_applied(self):
        cfg = run_config_from_dict({"scenario": "exp1_tjunction"})
        assert cfg.rho0 == 0.01
        assert cfg.delta == 0.0
        assert cfg.mode == "guarantee"

    def test_round_trip(self):
        cfg = run_config_from_dict(dict(BASE, rho0=0.05, jobs=2))
        assert parse_run_config(emit_run_config(cfg)) == cfg

    def test_unknown_key_suggestion(self):
        with pytest.raises(ConfigError, match="rho0"):
            run_config_from_dict(dict(BASE, rho_zero=0.1))

    def test_negative_rho_names_field(self):
        with pytest.raises(ConfigError, match="rho0"):
            run_config_from_dict(dict(BASE, rho0=-0.1))

    def test_negative_delta_rejected(self):
        with pytest.raises(ConfigError, match="delta"):
            run_config_from_dict(dict(BASE, delta=-1e-6))

    def test_unknown_algorithm_suggestion(self):
        with pytest.raises(ConfigError, match="rb-rhc"):
            run_config_from_dict(dict(BASE, algorithms=["rbrhc"]))

    def test_plan_horizon_capped_by_horizon(self):
        with pytest.raises(ConfigError, match="plan_horizon"):
            run_config_from_dict(dict(BASE, horizon=10, plan_horizon=12))

    def test_malformed_yaml_reports_line(self):
        with pytest.raises(ConfigError, match="line"):
            parse_run_config("scenario: [unclosed")

    def test_resolve_builtin_with_overrides(self):
        cfg = run_config_from_dict({
            "scenario": "clear_road", "plan_horizon": 8,
            "s_resolution": 1.0, "disks_per_rect": 2,
        })
        scenario = resolve_scenario(cfg)
        assert scenario.lattice.plan_horizon == 8
        assert scenario.lattice.s_resolution == 1.0
        assert scenario.disks_per_rect == 2


SCENARIO_YAML = """
name: custom_cross
dt: 1.0
horizon: 6
goal_s: 20.0
v_max: 4.0
path: [[0.0, 0.0], [40.0, 0.0]]
ego:
  footprints: [{length: 5.0, width: 2.0}]
  s0: 0.0
  v0: 2.0
  spread: [0.2, 0.1]
agents:
  - footprints: [{length: 4.0, width: 2.0}]
    patterns:
      - weight: 1.0
        positions: [[20.0, 10.0], [20.0, 8.0], [20.0, 6.0], [20.0, 4.0],
                    [20.0, 2.0], [20.0, 0.0], [20.0, -2.0], [20.0, -4.0],
                    [20.0, -6.0], [20.0, -8.0], [20.0, -10.0], [20.0, -12.0],
                    [20.0, -14.0], [20.0, -16.0], [20.0, -18.0]]
        sigmas: [0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3,
                 0.3, 0.3, 0.3]
"""


class TestScenarioFile:
    def test_parse_and_run(self, tmp_path):
        path = tmp_path / "scenario.yaml"
        path.write_text(SCENARIO_YAML)
        scenario = load_scenario(path)
        assert scenario.name == "custom_cross"
        assert scenario.agents[0].patterns[0].headings[0] == pytest.approx(-np.pi / 2)
        from riskbudget.controllers import IRB, run_episode
        trace = run_episode("rb-rhc", scenario, IRB(0.05, 0.0, 6), seed=1)
        assert len(trace.records) >= 1

    def test_unknown_scenario_key(self):
        data = yaml.safe_load(SCENARIO_YAML)
        data["goal"] = 3
        with pytest.raises(ConfigError, match="goal_s"):
            scenario_from_dict(data)

    def test_sigma_length_mismatch(self):
        data = yaml.safe_load(SCENARIO_YAML)
        data["agents"][0]["patterns"][0]["sigmas"] = [0.3, 0.3]
        with pytest.raises(ConfigError, match="sigmas"):
            scenario_from_dict(data)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_scenario("/nonexistent/scenario.yaml")


class TestCli:
    def write_config(self, tmp_path, **overrides):
        cfg = dict(BASE, out=str(tmp_path / "out"))
        cfg.update(overrides)
        path = tmp_path / "cfg.yaml"
        path.write_text(yaml.safe_dump(cfg))
        return path

    def test_run_writes_all_outputs(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        assert main(["run", "--config", str(cfg_path)]) == 0
        out = tmp_path / "out"
        assert (out / "trials.csv").exists()
        assert (out / "budget_trace_rb_rhc.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["kinds"]["rb-rhc"]["trials"] == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 5
        assert "version" in manifest

    def test_run_byte_deterministic(self, tmp_path):
        cfg_path = self.write_config(tmp_path, trials=4, algorithms=["rb-rhc", "jcc-rhc"])
        assert main(["run", "--config", str(cfg_path)]) == 0
        first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
        assert main(["run", "--config", str(cfg_path)]) == 0
        second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
        assert first == second

    def test_env_var_output_override(self, tmp_path, monkeypatch):
        cfg_path = self.write_config(tmp_path)
        override = tmp_path / "elsewhere"
        monkeypatch.setenv("RISKBUDGET_OUT", str(override))
        assert main(["run", "--config", str(cfg_path)]) == 0
        assert (override / "summary.json").exists()

    def test_config_error_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("scenario: clear_road\nrho0: 7.0\n")
        assert main(["run", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert json.loads(err)["error"] == "config"

    def test_missing_config_exit_code(self):
        assert main(["run", "--config", "/no/such/file.yaml"]) == 2

    def test_scenarios_list(self, capsys):
        assert main(["scenarios", "list"]) == 0
        out = capsys.readouterr().out
        assert "exp1_tjunction" in out
        assert "exp2_three_vehicle" in out

    def test_cli_flag_overrides(self, tmp_path):
        cfg_path = self.write_config(tmp_path, trials=2)
        out2 = tmp_path / "other"
        assert main(["run", "--config", str(cfg_path), "--trials", "1",
                     "--out", str(out2), "--seed", "9"]) == 0
        trials = (out2 / "trials.csv").read_text().strip().splitlines()
        assert len(trials) == 2  # header + one row
        assert trials[1].startswith("9,")


class TestVerification:
    def test_corrupted_bound_fails_check(self):
        def corrupted(mu1, cov1, r1, mu2, cov2, r2):
            from scipy.special import erf
            import numpy as np
            diff = np.asarray(mu2, float) - np.asarray(mu1, float)
            dist = float(np.hypot(*diff))
            d = dist - r1 - r2
            e = diff / dist
            var = float(e @ (np.asarray(cov1) + np.asarray(cov2)) @ e)
            # Sign of the erf argument flipped: tails invert.
            return float(np.clip(0.5 + 0.5 * erf(d / np.sqrt(2 * var)), 0, 1))

        good = check_disk_bound_mc(n_instances=4, n_samples=100_000)
        assert good.passed
        bad = check_disk_bound_mc(n_instances=4, n_samples=100_000,
                                  bound_fn=corrupted)
        assert not bad.passed
