import numpy as np
import pytest

from riskbudget.discrete import (BudgetedDiscretePolicy, DiscreteCCPOMDP,
                                 JointChanceDiscretePolicy, discrete_solve,
                                 exact_policy_profile, exact_policy_risk,
                                 open_loop_propagate, racetrack_greedy_policy,
                                 racetrack_model, random_model, sequence_policy,
                                 umdp_transform_check)
from riskbudget.errors import ModelTooLargeError

SLOW, FAST = 0, 1


class TestRacetrack:
    def test_greedy_policy_risk_exact(self):
        model = racetrack_model()
        assert exact_policy_risk(model, racetrack_greedy_policy) == pytest.approx(
            0.19, abs=1e-12)

    def test_always_slow_is_risk_free(self):
        model = racetrack_model()
        assert exact_policy_risk(model, sequence_policy([SLOW, SLOW])) == 0.0

    def test_fast_then_slow(self):
        model = racetrack_model()
        assert exact_policy_risk(model, sequence_policy([FAST, SLOW])) == pytest.approx(
            0.1, abs=1e-12)

    def test_slow_then_fast(self):
        # Zero first-curve risk leaves full survival mass for the second
        # curve's 10% crash chance.
        model = racetrack_model()
        assert exact_policy_risk(model, sequence_policy([SLOW, FAST])) == pytest.approx(
            0.1, abs=1e-12)

    def test_single_step_collision_mass(self):
        model = racetrack_model()
        profile = exact_policy_profile(model, sequence_policy([FAST, SLOW]))
        assert np.allclose(profile.entry_masses, [0.0, 0.1, 0.0], atol=1e-15)

    def test_umdp_check_fast_slow(self):
        model = racetrack_model()
        bound, exact = umdp_transform_check(model, [FAST, SLOW])
        assert bound == pytest.approx(0.1, abs=1e-12)
        assert exact == pytest.approx(0.1, abs=1e-12)
        assert bound >= exact - 1e-15

    def test_umdp_check_safe_sequence(self):
        model = racetrack_model()
        assert umdp_transform_check(model, [SLOW, SLOW]) == (0.0, 0.0)

    def test_receding_adapter_reproduces_greedy(self):
        model = racetrack_model()
        adapter = JointChanceDiscretePolicy(model, alpha_iter=0.1, plan_horizon=2)
        assert adapter(0, (), model.b0) == FAST
        assert adapter(1, (0,), None) == FAST  # survived curve one: go 90
        assert exact_policy_risk(model, adapter) == pytest.approx(0.19, abs=1e-12)

    def test_budgeted_adapter_stays_within_budget(self):
        model = racetrack_model()
        adapter = BudgetedDiscretePolicy(model, rho0=0.1, delta=0.0, plan_horizon=2)
        assert adapter(0, (), model.b0) == FAST        # spends the full budget
        assert adapter(1, (0,), None) == SLOW          # ledger forces 70
        assert exact_policy_risk(model, adapter) <= 0.1 + 1e-12


class TestEnumeration:
    def test_single_step_mass(self):
        # One control, collision mass p at the only step.
        p = 0.37
        transitions = np.array([[[1 - p, p], [0.0, 1.0]]])
        model = DiscreteCCPOMDP(
            transitions=transitions, obs_kernel=np.ones((2, 1)),
            b0=np.array([1.0, 0.0]), horizon=1,
            coll=np.array([False, True]), step_costs=np.zeros((1, 2)),
        )
        assert exact_policy_risk(model, sequence_policy([0])) == pytest.approx(p)

    def test_closed_form_survival_chain(self):
        # Deterministic observations, per-step crash chance p:
        # risk = 1 - (1 - p)^T.
        p = 0.2
        model = DiscreteCCPOMDP(
            transitions=np.array([[[1 - p, p], [0.0, 1.0]]]),
            obs_kernel=np.eye(2),
            b0=np.array([1.0, 0.0]), horizon=3,
            coll=np.array([False, True]), step_costs=np.zeros((1, 2)),
        )
        expected = 1 - (1 - p) ** 3
        assert exact_policy_risk(model, sequence_policy([0, 0, 0])) == pytest.approx(
            expected, abs=1e-15)

    def test_occupancy_dominates_strictly_with_absorption(self):
        p = 0.2
        model = DiscreteCCPOMDP(
            transitions=np.array([[[1 - p, p], [0.0, 1.0]]]),
            obs_kernel=np.eye(2),
            b0=np.array([1.0, 0.0]), horizon=3,
            coll=np.array([False, True]), step_costs=np.zeros((1, 2)),
        )
        profile = exact_policy_profile(model, sequence_policy([0, 0, 0]))
        assert profile.occupancy.sum() > profile.exact_risk
        assert profile.entry_masses.sum() == pytest.approx(profile.exact_risk, abs=1e-15)

    def test_node_cap(self):
        n_obs = 8
        model = DiscreteCCPOMDP(
            transitions=np.tile(np.eye(3), (1, 1, 1)),
            obs_kernel=np.full((3, n_obs), 1.0 / n_obs),
            b0=np.array([1.0, 0.0, 0.0]), horizon=8,
            coll=np.array([False, False, True]), step_costs=np.zeros((1, 3)),
        )
        with pytest.raises(ModelTooLargeError):
            exact_policy_risk(model, sequence_policy([0] * 8))

    def test_validation_rejects_nonstochastic(self):
        with pytest.raises(ValueError):
            DiscreteCCPOMDP(
                transitions=np.array([[[0.5, 0.4], [0.0, 1.0]]]),
                obs_kernel=np.ones((2, 1)),
                b0=np.array([1.0, 0.0]), horizon=1,
                coll=np.array([False, True]), step_costs=np.zeros((1, 2)),
            )

    def test_validation_rejects_nonabsorbing_collision(self):
        with pytest.raises(ValueError):
            DiscreteCCPOMDP(
                transitions=np.array([[[0.5, 0.5], [1.0, 0.0]]]),
                obs_kernel=np.ones((2, 1)),
                b0=np.array([1.0, 0.0]), horizon=1,
                coll=np.array([False, True]), step_costs=np.zeros((1, 2)),
            )

    def test_dict_round_trip(self):
        model = racetrack_model()
        clone = DiscreteCCPOMDP.from_dict(model.to_dict())
        assert np.array_equal(clone.transitions, model.transitions)
        assert np.array_equal(clone.b0, model.b0)
        assert clone.horizon == model.horizon
        assert exact_policy_risk(clone, racetrack_greedy_policy) == pytest.approx(0.19)


class TestRandomCorpus:
    def test_boole_dominance_and_budget_bound(self):
        rng = np.random.default_rng(42)
        for _ in range(12):
            model, rho0, delta, n = random_model(rng)
            adapter = BudgetedDiscretePolicy(model, rho0, delta, n)
            profile = exact_policy_profile(model, adapter)
            bound = rho0 + delta * model.horizon
            assert profile.exact_risk <= bound + 1e-12
            assert profile.entry_masses.sum() >= profile.exact_risk - 1e-12
            assert profile.occupancy.sum() >= profile.exact_risk - 1e-12
            for u in range(model.n_controls):
                seq_profile = exact_policy_profile(
                    model, sequence_policy([u] * model.horizon))
                assert seq_profile.entry_masses.sum() >= seq_profile.exact_risk - 1e-12
                assert seq_profile.occupancy.sum() >= seq_profile.exact_risk - 1e-12

    def test_open_loop_propagate_is_matrix_product(self):
        rng = np.random.default_rng(5)
        model, _, _, _ = random_model(rng)
        b = model.b0
        for u in range(model.n_controls):
            assert np.allclose(open_loop_propagate(model, b, u),
                               model.transitions[u].T @ b, atol=1e-15)

    def test_solve_tie_break_lexicographic(self):
        # Two zero-risk zero-cost controls: the smaller index wins.
        transitions = np.tile(np.eye(2), (2, 1, 1))
        model = DiscreteCCPOMDP(
            transitions=transitions, obs_kernel=np.ones((2, 1)),
            b0=np.array([1.0, 0.0]), horizon=2,
            coll=np.array([False, True]), step_costs=np.zeros((2, 2)),
        )
        result = discrete_solve(model, model.b0, rho=1.0, horizon=2)
        assert result.controls == [0, 0]
