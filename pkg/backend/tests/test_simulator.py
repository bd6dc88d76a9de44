# backend/tests/test_simulator.py
import math

import numpy as np
import pytest
from scipy.special import expit

from backend.scipnet.errors import NonpositiveVolumeError, ValidationError
from backend.scipnet.schemas import EvalConfig, InterventionPlan, PatientParams, SimConfig
from backend.scipnet.simulator import (
    SubjectTruth,
    build_eval_records,
    diameter,
    ground_truth_capo,
    max_volume,
    observation_intensity,
    sample_params,
    sample_test_interventions,
    simulate,
    simulate_cohort,
    step_tumor,
    treatment_policy,
    volume,
)
from backend.scipnet.trajectory import HistoryPrefix, validate
from backend.scipnet.utils import dumps_jsonl


def _params(**overrides) -> PatientParams:
    values = {"rho": 0.0, "alpha_r": 0.0, "beta_r": 0.0, "alpha_c": 0.0}
    values.update(overrides)
    return PatientParams(**values)


# =============================================================================
# PARAMETERS
# =============================================================================
class TestSampleParams:

    @pytest.mark.parametrize("seed", [0, 1, 17])
    def test_fixed_constants(self, seed):
        params = sample_params(seed)
        assert params.K == 30.0
        assert params.beta_r / params.alpha_r == pytest.approx(10.0)

    def test_deterministic(self):
        assert sample_params(42) == sample_params(42)

    def test_rates_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            params = sample_params(rng)
            assert params.rho >= 0 and params.alpha_r >= 0 and params.alpha_c >= 0

    def test_beta_ratio_enforced(self):
        with pytest.raises(ValueError):
            PatientParams(rho=0.0, alpha_r=0.1, beta_r=0.5, alpha_c=0.0)


# =============================================================================
# DYNAMICS
# =============================================================================
class TestStepTumor:

    def test_carrying_capacity_is_fixed_point(self):
        assert step_tumor(30.0, 0, 0, _params(rho=7e-5)) == pytest.approx(30.0)

    def test_growth_arithmetic(self):
        expected = 15.0 * (1 + 7e-5 * math.log(2))
        assert step_tumor(15.0, 0, 0, _params(rho=7e-5)) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(15.000728, abs=1e-6)

    def test_chemo_arithmetic(self):
        assert step_tumor(15.0, 1.0, 0, _params(alpha_c=0.028)) == pytest.approx(14.58)

    def test_clamped_to_bounds(self):
        assert step_tumor(15.0, 100.0, 0, _params(alpha_c=0.028), y_min=0.01) == 0.01
        assert step_tumor(max_volume(), 0, 0, _params(rho=0.0), eps=0.5) == pytest.approx(max_volume())

    def test_nonpositive_volume(self):
        with pytest.raises(NonpositiveVolumeError):
            step_tumor(0.0, 0, 0, _params())

    def test_untreated_rollout_monotone_toward_capacity(self):
        params = _params(rho=0.05)
        y = 1.0
        for _ in range(200):
            nxt = step_tumor(y, 0, 0, params)
            assert y <= nxt <= 30.0 + 1e-12
            y = nxt

    def test_diameter_volume_inverse(self):
        assert diameter(volume(13.0)) == pytest.approx(13.0)


class TestPolicies:

    def test_no_confounding_gives_half(self):
        assert treatment_policy([1.0, 200.0], gamma=0.0) == (0.5, 0.5)

    def test_centered_history_gives_half(self):
        centered = float(volume(6.5))
        p, _ = treatment_policy([centered] * 3, gamma=8.0)
        assert p == pytest.approx(0.5)

    def test_large_tumor(self):
        p_c, p_r = treatment_policy([max_volume(13.0)] * 15, gamma=8.0, d_max=13.0)
        assert p_c == pytest.approx(expit(4.0)) and p_r == p_c
        assert p_c == pytest.approx(0.9820, abs=1e-4)

    def test_window_uses_last_days_only(self):
        small, large = float(volume(1.0)), float(volume(13.0))
        recent, _ = treatment_policy([small] * 5 + [large] * 3, 8.0, window=3)
        assert recent == pytest.approx(treatment_policy([large], 8.0)[0])

    def test_empty_history_rejected(self):
        with pytest.raises(ValidationError):
            treatment_policy([], gamma=1.0)

    def test_uninformative_observation(self):
        assert observation_intensity([0.5, 400.0], omega=0.0) == 0.5

    def test_informative_observation(self):
        rate = observation_intensity([float(volume(13.0))], omega=0.5, d_ref=13.0)
        assert rate == pytest.approx(expit(0.25))
        assert rate == pytest.approx(0.5622, abs=1e-4)

    def test_observation_saturates(self):
        assert observation_intensity([float(volume(13.0))], omega=200.0, d_ref=1.0) > 0.999


# =============================================================================
# COHORTS
# =============================================================================
class TestSimulate:

    def test_trajectories_are_valid(self, tiny_cohort, tiny_sim):
        trajectories, truths = tiny_cohort
        assert len(trajectories) == tiny_sim.n_subjects
        for traj, truth in zip(trajectories, truths):
            assert validate(traj) == []
            assert traj.y_mask[0] == 1
            assert len(truth.volumes) == tiny_sim.tau + 1
            observed = [s for s, m in enumerate(traj.y_mask) if m]
            for s in observed:
                assert traj.y[s][0] == truth.volumes[s]

    def test_lagged_outcome_covariate(self, tiny_cohort):
        traj = tiny_cohort[0][0]
        observed = [s for s, m in enumerate(traj.y_mask) if m]
        assert traj.x[observed[0]] == traj.y[observed[0]]
        for prev, cur in zip(observed, observed[1:]):
            assert traj.x[cur] == traj.y[prev]

    def test_byte_identical_rerun(self, tiny_sim):
        assert dumps_jsonl(simulate(tiny_sim)) == dumps_jsonl(simulate(tiny_sim))

    def test_streams_differ(self, tiny_sim):
        train, _ = simulate_cohort(tiny_sim, 3)
        test, _ = simulate_cohort(tiny_sim, 3, stream=1, id_offset=100)
        assert [t.id for t in test] == [100, 101, 102]
        assert train[0].y[0] != test[0].y[0]

    def test_daily_decisions_at_full_rate(self):
        config = SimConfig(n_subjects=5, tau=10, window=5, decision_rate=1.0, gamma=0.0)
        for traj in simulate(config):
            assert traj.a_mask[:-1] == [1] * 10
            assert traj.a_mask[-1] == 0

    @staticmethod
    def _size_treatment_correlation(gamma: float) -> float:
        config = SimConfig(n_subjects=200, gamma=gamma, seed=4)
        trajectories, truths = simulate_cohort(config)
        d_bar, chemo = [], []
        for traj, truth in zip(trajectories, truths):
            for s, (a, decided) in enumerate(zip(traj.a, traj.a_mask)):
                if not decided:
                    continue
                history = truth.volumes[max(0, s - config.window):s] if s > 0 else truth.volumes[:1]
                d_bar.append(float(np.mean(diameter(history))))
                chemo.append(a[0])
        return abs(float(np.corrcoef(d_bar, chemo)[0, 1]))

    def test_confounding_grows_with_gamma(self):
        weak, medium, strong = (self._size_treatment_correlation(g) for g in (0.0, 4.0, 8.0))
        assert weak < 0.05
        assert weak < medium < strong

    @pytest.mark.slow
    def test_unconfounded_treatment_frequency(self):
        trajectories = simulate(SimConfig(n_subjects=1000, gamma=0.0, seed=11))
        decided = np.array([a for t in trajectories for a, m in zip(t.a, t.a_mask) if m], dtype=float)
        assert decided.mean(axis=0) == pytest.approx([0.5, 0.5], abs=0.02)

    @pytest.mark.slow
    def test_observed_fraction(self):
        trajectories = simulate(SimConfig(n_subjects=1000, omega=0.0, seed=12))
        observed = np.mean([m for t in trajectories for m in t.y_mask[1:]])
        assert observed == pytest.approx(0.5, abs=0.02)


# =============================================================================
# GROUND TRUTH AND INTERVENTIONS
# =============================================================================
class TestGroundTruth:

    @pytest.fixture
    def subject(self, tiny_cohort):
        trajectories, truths = tiny_cohort
        return trajectories[0], truths[0]

    def test_empty_plan_at_tau(self, subject, tiny_sim):
        traj, truth = subject
        prefix = HistoryPrefix(trajectory=traj, cutoff=10.0)
        plan = InterventionPlan(start=10.0, horizon=10.0)
        assert ground_truth_capo(prefix, plan, truth, tiny_sim)[0] == truth.volumes[10]

    def test_treatment_never_increases_outcome(self, subject, tiny_sim):
        traj, truth = subject
        prefix = HistoryPrefix(trajectory=traj, cutoff=4.0)
        treated = InterventionPlan(start=4.0, jump_times=[4.0, 5.0, 6.0], values=[[1, 0]] * 3, horizon=7.0)
        untreated = InterventionPlan(start=4.0, horizon=7.0)
        assert ground_truth_capo(prefix, treated, truth, tiny_sim)[0] <= ground_truth_capo(prefix, untreated, truth, tiny_sim)[0]

    def test_one_step_plan_matches_step(self, subject, tiny_sim):
        traj, truth = subject
        prefix = HistoryPrefix(trajectory=traj, cutoff=3.0)
        plan = InterventionPlan(start=3.0, jump_times=[3.0], values=[[1, 1]], horizon=4.0)
        expected = step_tumor(
            truth.volumes[3], tiny_sim.chemo_dose, tiny_sim.radio_dose, truth.params,
            0.0, tiny_sim.y_min, max_volume(tiny_sim.d_max),
        )
        assert ground_truth_capo(prefix, plan, truth, tiny_sim)[0] == expected

    def test_plan_before_cutoff_rejected(self, subject):
        traj, truth = subject
        with pytest.raises(ValidationError):
            ground_truth_capo(HistoryPrefix(trajectory=traj, cutoff=5.0), InterventionPlan(start=4.0, horizon=6.0), truth)

    def test_uses_true_not_observed_history(self):
        params = _params(rho=0.01)
        truth = SubjectTruth(subject_id=0, params=params, volumes=np.array([1.0, 2.0, 3.0]))
        prefix = HistoryPrefix(trajectory=None, cutoff=1.0)
        plan = InterventionPlan(start=1.0, horizon=2.0)
        assert ground_truth_capo(prefix, plan, truth)[0] == step_tumor(2.0, 0, 0, params)


class TestInterventions:

    @pytest.fixture
    def prefix(self, full_trajectory):
        return HistoryPrefix(trajectory=full_trajectory, cutoff=5.0)

    def test_one_day_plans_uniform(self, prefix):
        plans = sample_test_interventions(prefix, 1, 4000, seed=0)
        counts = {}
        for plan in plans:
            key = tuple(plan.values[0])
            counts[key] = counts.get(key, 0) + 1
        assert set(counts) == {(0, 0), (0, 1), (1, 0), (1, 1)}
        for count in counts.values():
            assert count / 4000 == pytest.approx(0.25, abs=0.03)

    def test_reproducible(self, prefix):
        assert sample_test_interventions(prefix, 3, 1, seed=9) == sample_test_interventions(prefix, 3, 1, seed=9)

    def test_jump_every_day_of_window(self, prefix):
        plan = sample_test_interventions(prefix, 3, 1, seed=1)[0]
        assert plan.start == 5.0 and plan.horizon == 8.0
        assert plan.jump_times == [5.0, 6.0, 7.0]

    def test_zero_horizon_rejected(self, prefix):
        with pytest.raises(ValidationError):
            sample_test_interventions(prefix, 0, 5, seed=0)

    def test_eval_records(self, tiny_sim):
        test, truths = simulate_cohort(tiny_sim, 4, stream=1, id_offset=tiny_sim.n_subjects)
        records = build_eval_records(test, truths, tiny_sim, EvalConfig(n_test_subjects=4, n_plans=3, horizons=[1, 2]))
        assert len(records) == 4 * 2 * 3
        by_subject = {}
        for record in records:
            by_subject.setdefault(record.subject_id, set()).add(record.prefix_cutoff)
            assert 1 <= record.prefix_cutoff <= tiny_sim.tau - 2
            assert record.intervention_plan.horizon == record.prefix_cutoff + record.horizon
        assert all(len(cutoffs) == 1 for cutoffs in by_subject.values())

    def test_eval_records_need_room(self, tiny_sim):
        test, truths = simulate_cohort(tiny_sim, 1)
        with pytest.raises(ValidationError):
            build_eval_records(test, truths, tiny_sim, EvalConfig(horizons=[10]))
