import math

import numpy as np
import pytest

from riskbudget.beliefs import open_loop_update
from riskbudget.controllers import (IRB, JCC_FH, JCC_RHC, PCL_RHC, RB_RHC,
                                    RiskLedger, jcc_fh_plan, jcc_rhc_step,
                                    make_controller, pcl_rhc_step, rbrhc_step,
                                    run_episode)
from riskbudget.lattice import expand_graph, solve_chance_constrained
from riskbudget.risk import collision_probability, stop_collision_bound
from riskbudget.scenarios import (adversarial_crossing, clear_road,
                                  exp1_tjunction, sample_ground_truth)

from test_lattice import toy_setup


class TestIRB:
    def test_bound_is_affine(self):
        irb = IRB(rho0=0.02, delta=0.001, horizon=10)
        assert irb.bound(0) == 0.02
        assert irb.bound(10) == pytest.approx(0.03)

    def test_rejects_negative_parameters(self):
        with pytest.raises(ValueError):
            IRB(rho0=-0.1, delta=0.0, horizon=5)
        with pytest.raises(ValueError):
            IRB(rho0=0.1, delta=-1e-9, horizon=5)


class TestLedger:
    def test_identity_maintained(self):
        ledger = RiskLedger(IRB(rho0=0.1, delta=0.01, horizon=20))
        ledger.apply(0, "plan", 0.03)
        ledger.apply(1, "plan", 0.02)
        ledger.apply(2, "stop", 0.0)
        assert ledger.rho == pytest.approx(0.1 - 0.05 + 3 * 0.01, abs=1e-15)
        ledger.verify()

    def test_overdraft_asserts(self):
        ledger = RiskLedger(IRB(rho0=0.01, delta=0.0, horizon=5))
        with pytest.raises(AssertionError):
            ledger.apply(0, "plan", 0.02)

    def test_verify_detects_tampering(self):
        ledger = RiskLedger(IRB(rho0=0.1, delta=0.0, horizon=5))
        ledger.apply(0, "plan", 0.01)
        ledger.rho += 1e-6
        with pytest.raises(AssertionError):
            ledger.verify()


class TestRbrhcStep:
    def test_clear_road_credits_delta(self):
        belief, spec, cm, wm = toy_setup(agent_y=100.0)
        irb = IRB(rho0=0.01, delta=0.002, horizon=10)
        ledger = RiskLedger(irb)
        decision = rbrhc_step(belief, ledger, spec, cm, wm)
        assert decision.feasible
        assert decision.subtracted == 0.0
        assert ledger.rho == pytest.approx(0.012, abs=1e-15)

    def test_ledger_arithmetic_with_risk(self):
        belief, spec, cm, wm = toy_setup(agent_y=2.6, agent_x=9.0, sigma=0.7,
                                         v0=3.0)
        irb = IRB(rho0=0.01, delta=0.001, horizon=10)
        ledger = RiskLedger(irb)
        decision = rbrhc_step(belief, ledger, spec, cm, wm)
        assert decision.feasible
        successor = open_loop_update(belief, decision.control, wm)
        r = collision_probability(successor, cm) + stop_collision_bound(successor, cm, wm)
        assert decision.subtracted == pytest.approx(r, abs=1e-12)
        assert ledger.rho == pytest.approx(0.01 - r + 0.001, abs=1e-12)

    def test_infeasible_moving_brakes_without_debit(self):
        belief, spec, cm, wm = toy_setup(agent_y=1.0, agent_x=4.0, sigma=0.5,
                                         v0=4.0)
        irb = IRB(rho0=0.0, delta=0.0005, horizon=10)
        ledger = RiskLedger(irb)
        decision = rbrhc_step(belief, ledger, spec, cm, wm)
        assert not decision.feasible
        assert decision.control == -wm.stop.u_stop
        assert decision.subtracted == 0.0
        assert ledger.rho == pytest.approx(0.0005, abs=1e-15)

    def test_infeasible_stopped_noops(self):
        belief, spec, cm, wm = toy_setup(agent_y=0.5, agent_x=3.0, sigma=2.0,
                                         v0=0.0)
        # Tiny negative-risk impossible; force infeasible via huge ambient risk
        # and zero budget plus positive-risk-everywhere geometry: park an
        # agent with wide spread on top of the path ahead and behind.
        irb = IRB(rho0=0.0, delta=0.0, horizon=10)
        ledger = RiskLedger(irb)
        decision = rbrhc_step(belief, ledger, spec, cm, wm)
        # Stay-put plan has exactly zero risk, so this is feasible NO-OP
        # territory; control must hold the vehicle still either way.
        assert decision.control == 0.0


class TestBaselines:
    def test_jcc_fh_alpha_one_is_unconstrained(self):
        belief, spec, cm, wm = toy_setup(agent_y=3.0, agent_x=10.0)
        plan = jcc_fh_plan(belief, 1.0, spec, cm, wm)
        unconstrained = solve_chance_constrained(belief, 1.0, spec, cm, wm,
                                                 update_rule="open_loop",
                                                 include_stop_risk=False)
        assert plan.cost == unconstrained.cost

    def test_no_agents_all_controllers_agree_with_budgeted(self):
        belief, spec, cm, wm = toy_setup(agent_y=1e6)
        ledger = RiskLedger(IRB(0.01, 0.0, 10))
        rb = rbrhc_step(belief, ledger, spec, cm, wm)
        fh = jcc_fh_plan(belief, 0.01, spec, cm, wm)
        jcc = jcc_rhc_step(belief, spec, cm, wm, 0.01)
        pcl = pcl_rhc_step(belief, spec, cm, wm, 0.01)
        assert rb.control == fh.controls[0] == jcc.control == pcl.control

    def test_single_pattern_pcl_equals_jcc_decision(self):
        belief, spec, cm, wm = toy_setup(agent_y=2.8, agent_x=10.0, sigma=0.6)
        jcc = jcc_rhc_step(belief, spec, cm, wm, 0.01)
        pcl = pcl_rhc_step(belief, spec, cm, wm, 0.01)
        assert jcc.control == pcl.control

    def test_two_pattern_pcl_plans_less_horizon_risk(self):
        belief, spec, cm, wm = toy_setup(
            agent_y=3.0, agent_x=18.0, agent_vx=-1.0, sigma=0.5,
            weights=(0.6, 0.4), plan_horizon=6, goal=30.0)
        # Same belief, two update rules: the heuristic reweighting discounts
        # the non-dominant pattern, so its planned horizon risk cannot exceed
        # the open-loop plan's when both take the unconstrained route.
        g_ol = expand_graph(belief, spec, cm, wm, update_rule="open_loop",
                            include_stop_risk=False)
        g_pcl = expand_graph(belief, spec, cm, wm, update_rule="pcl",
                             first_step_open_loop=False, include_stop_risk=False)
        from riskbudget.lattice import search_with_lambda
        ol = search_with_lambda(g_ol, 0.0)
        pcl = search_with_lambda(g_pcl, 0.0)
        assert pcl.total_risk <= ol.total_risk + 1e-15

    def test_infeasible_baseline_brakes(self):
        belief, spec, cm, wm = toy_setup(agent_y=1.0, agent_x=4.0, sigma=0.5,
                                         v0=4.0)
        jcc = jcc_rhc_step(belief, spec, cm, wm, 0.0)
        assert not jcc.feasible and jcc.control == -wm.stop.u_stop


class TestRunEpisode:
    def test_empty_scenario_reaches_goal_without_collisions(self):
        scenario = clear_road()
        irb = IRB(0.01, 0.0, scenario.horizon)
        trace = run_episode(RB_RHC, scenario, irb, seed=5)
        assert not trace.collided
        assert trace.reached_goal
        assert trace.total_cost == len(trace.records) * scenario.dt

    def test_fixed_seed_bit_identical(self):
        scenario = exp1_tjunction()
        irb = IRB(0.01, 0.0, scenario.horizon)
        a = run_episode(RB_RHC, scenario, irb, seed=17)
        b = run_episode(RB_RHC, scenario, irb, seed=17)
        assert len(a.records) == len(b.records)
        for ra, rb in zip(a.records, b.records):
            assert ra == rb
        assert a.total_cost == b.total_cost

    def test_collision_flag_terminates_episode(self):
        scenario = adversarial_crossing()
        irb = IRB(0.01, 0.0, scenario.horizon)
        found = False
        for seed in range(40):
            trace = run_episode(PCL_RHC, scenario, irb, seed=seed)
            flags = [r.collided for r in trace.records]
            assert sum(flags) <= 1
            if trace.collided:
                assert flags[-1]
                found = True
        assert found, "fixture is expected to produce optimistic-planner collisions"

    def test_budget_never_exceeded(self):
        scenario = exp1_tjunction()
        irb = IRB(0.01, 0.0005, scenario.horizon)
        trace = run_episode(RB_RHC, scenario, irb, seed=3)
        spent = 0.0
        for k, record in enumerate(trace.records):
            spent += record.risk_subtracted
            assert spent <= irb.bound(k) + 1e-12

    def test_non_budgeted_controllers_have_nan_budget(self):
        scenario = clear_road()
        irb = IRB(0.01, 0.0, scenario.horizon)
        trace = run_episode(JCC_RHC, scenario, irb, seed=2)
        assert all(math.isnan(r.budget) for r in trace.records)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            make_controller("magic", clear_road(), IRB(0.1, 0.0, 5))
