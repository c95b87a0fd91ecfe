import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskbudget.controllers import IRB, RB_RHC
from riskbudget.geometry import rect_corners, rects_overlap
from riskbudget.lattice import solve_chance_constrained
from riskbudget.montecarlo import run_trial, wilson_interval
from riskbudget.scenarios import (adversarial_crossing, builtin_scenarios,
                                  clear_road, exp1_tjunction,
                                  exp2_three_vehicle, sample_ground_truth)


class TestGroundTruthSampling:
    def test_same_seed_identical_draw(self):
        scenario = exp2_three_vehicle()
        a = sample_ground_truth(scenario, 123)
        b = sample_ground_truth(scenario, 123)
        assert a.ego_start == b.ego_start
        assert a.chosen_patterns == b.chosen_patterns
        for ta, tb in zip(a.agent_tracks, b.agent_tracks):
            assert np.array_equal(ta, tb)
        assert np.array_equal(a.ego_noise, b.ego_noise)

    def test_zero_spread_single_pattern_is_exact(self):
        scenario = exp1_tjunction()
        from dataclasses import replace
        from riskbudget.beliefs import AgentPattern
        agent = scenario.agents[0]
        pattern = agent.patterns[0]
        degenerate = replace(pattern, covs=np.zeros_like(pattern.covs))
        scenario = replace(
            scenario, ego_spread=(0.0, 0.0),
            agents=(replace(agent, patterns=(degenerate,)),),
        )
        gt = sample_ground_truth(scenario, 7)
        assert np.array_equal(gt.agent_tracks[0], degenerate.means)
        assert gt.ego_start == scenario.ego_start

    def test_mixture_frequency_matches_weights(self):
        scenario = exp2_three_vehicle()
        picks = np.array([sample_ground_truth(scenario, seed).chosen_patterns[1]
                          for seed in range(10_000)])
        freq = (picks == 0).mean()
        se = np.sqrt(0.7 * 0.3 / 10_000)
        assert abs(freq - 0.7) <= 3 * se

    def test_marginal_spread_matches_prediction(self):
        scenario = exp1_tjunction()
        step = 10
        pattern = scenario.agents[0].patterns[0]
        draws = np.array([
            sample_ground_truth(scenario, seed).agent_tracks[0][step]
            for seed in range(4000)
        ])
        sigma = np.sqrt(pattern.covs[step, 0, 0])
        assert np.allclose(draws.std(axis=0), sigma, rtol=0.1)
        assert np.allclose(draws.mean(axis=0), pattern.means[step], atol=4 * sigma / np.sqrt(4000) + 1e-9)

    def test_paired_trials_share_ground_truth(self):
        scenario = adversarial_crossing()
        irb = IRB(0.01, 0.0, scenario.horizon)
        results = run_trial(scenario, ["rb-rhc", "pcl-rhc"], irb, seed=9)
        assert results[0].seed == results[1].seed == 9
        gt_a = sample_ground_truth(scenario, 9)
        gt_b = sample_ground_truth(scenario, 9)
        for ta, tb in zip(gt_a.agent_tracks, gt_b.agent_tracks):
            assert np.array_equal(ta, tb)


class TestOverlap:
    @settings(max_examples=60, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 2 * np.pi),
           st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 2 * np.pi))
    def test_symmetry(self, x1, y1, h1, x2, y2, h2):
        a = rect_corners(x1, y1, h1, 4.0, 2.0)
        b = rect_corners(x2, y2, h2, 3.0, 1.5)
        assert rects_overlap(a, b) == rects_overlap(b, a)

    def test_known_cases(self):
        a = rect_corners(0, 0, 0, 4, 2)
        assert rects_overlap(a, rect_corners(3, 0, 0, 4, 2))       # overlapping
        assert not rects_overlap(a, rect_corners(5, 0, 0, 4, 2))   # clear
        assert rects_overlap(a, rect_corners(4, 0, 0, 4, 2))       # touching
        assert rects_overlap(a, rect_corners(0, 0, np.pi / 4, 4, 2))

    def test_rotation_separates(self):
        a = rect_corners(0, 0, 0, 4, 2)
        # Diagonal neighbor overlaps axis-aligned but clears when both rotate.
        assert rects_overlap(a, rect_corners(3.5, 1.5, 0, 4, 2))
        assert not rects_overlap(rect_corners(0, 0, np.pi / 2, 4, 2),
                                 rect_corners(3.5, 1.5, np.pi / 2, 4, 2))


class TestBuiltins:
    def test_catalog(self):
        names = set(builtin_scenarios())
        assert {"exp1_tjunction", "exp2_three_vehicle", "clear_road",
                "adversarial_crossing"} <= names

    def test_exp1_parameters(self):
        scenario = exp1_tjunction()
        assert scenario.horizon == 25
        assert scenario.dt == 1.0
        assert scenario.lattice.plan_horizon == 25
        assert scenario.ego_footprints[0].length == 12.6
        assert scenario.ego_footprints[0].width == 2.4
        assert len(scenario.agents) == 1

    def test_exp2_parameters(self):
        scenario = exp2_three_vehicle()
        assert scenario.horizon == 25
        assert len(scenario.agents) == 2
        weights = [p.weight for p in scenario.agents[1].patterns]
        assert weights == [0.7, 0.3]
        tractor, trailer = scenario.ego_footprints
        assert (tractor.length, tractor.width) == (5.0, 2.5)
        assert (trailer.length, trailer.width) == (12.5, 2.4)

    def test_pattern_coverage(self):
        for name, factory in builtin_scenarios().items():
            scenario = factory()
            needed = (scenario.horizon + scenario.lattice.plan_horizon
                      + scenario.stop.t_stop)
            for agent in scenario.agents:
                for pattern in agent.patterns:
                    assert len(pattern) > needed, name

    @pytest.mark.parametrize("factory", [exp1_tjunction, exp2_three_vehicle,
                                         adversarial_crossing, clear_road])
    def test_nominal_start_is_recoverable(self, factory):
        scenario = factory()
        belief = scenario.initial_belief(scenario.ego_start)
        plan = solve_chance_constrained(
            belief, 0.01, scenario.lattice, scenario.collision_model(),
            scenario.world_model())
        assert plan is not None

    def test_weights_sum_validation(self):
        from dataclasses import replace
        scenario = exp2_three_vehicle()
        agent = scenario.agents[1]
        broken = replace(agent.patterns[0], weight=0.8)
        with pytest.raises(ValueError):
            replace(agent, patterns=(broken, agent.patterns[1]))


class TestWilson:
    def test_matches_reference_values(self):
        # Standard Wilson 95% intervals.
        lo, hi = wilson_interval(0, 100)
        assert lo == pytest.approx(0.0, abs=1e-12)
        assert hi == pytest.approx(0.0370, abs=5e-4)
        lo, hi = wilson_interval(10, 1000)
        assert lo == pytest.approx(0.00545, abs=5e-4)
        assert hi == pytest.approx(0.01828, abs=5e-4)

    def test_degenerate(self):
        assert wilson_interval(0, 0) == (0.0, 1.0)
