# backend/tests/test_weights.py
import math

import numpy as np
import pytest

from backend.scipnet.errors import ValidationError, WeightMismatchError
from backend.scipnet.schemas import InterventionPlan
from backend.scipnet.weights import (
    ConstantModel,
    GridModel,
    PiecewiseConstantModel,
    WeightTrace,
    integrated_intensity,
    normalize_mean_one,
    plan_weights,
    product_integral_oracle,
    scaling_factor,
    scaling_oracle,
    stabilized_weight,
    truncate_normalize,
    unstabilized_weight,
)

SUBSTEP = 1e-3


class LinearModel:
    """lambda(s) = s."""

    def intensity(self, s):
        return np.asarray(s, dtype=float)

    def propensity(self, s, a):
        return np.ones(np.shape(s))


def _plan(start, jumps, horizon=None, values=None):
    values = values if values is not None else [[1, 0]] * len(jumps)
    return InterventionPlan(start=start, jump_times=jumps, values=values, horizon=horizon if horizon is not None else max([start] + jumps))


# =============================================================================
# QUADRATURE
# =============================================================================
class TestIntegratedIntensity:

    def test_zero_intensity(self):
        assert integrated_intensity(ConstantModel(0.0, 1.0), 0.0, 5.0, 0.1, floor=None) == 0.0

    def test_constant_intensity(self):
        assert integrated_intensity(ConstantModel(0.3, 1.0), 0.0, 2.0, 0.1) == pytest.approx(0.6)

    @pytest.mark.parametrize("h", [0.1, 0.01, 0.001])
    def test_left_riemann_sum_of_identity(self, h):
        assert integrated_intensity(LinearModel(), 0.0, 1.0, h, floor=None) == pytest.approx(0.5 - h / 2)

    def test_floor_applies(self):
        assert integrated_intensity(ConstantModel(0.0, 1.0), 0.0, 2.0, 0.5, floor=1e-3) == pytest.approx(2e-3)

    def test_reversed_bounds(self):
        with pytest.raises(ValidationError):
            integrated_intensity(ConstantModel(1.0, 1.0), 2.0, 1.0, 0.1)


# =============================================================================
# PER-JUMP FACTORS
# =============================================================================
class TestUnstabilized:

    def test_unit_case(self):
        trace = unstabilized_weight(ConstantModel(1.0, 1.0), _plan(3.0, [3.0]), SUBSTEP)
        assert trace.product_unstabilized == pytest.approx(1.0)

    def test_single_jump(self):
        trace = unstabilized_weight(ConstantModel(0.5, 0.25), _plan(0.0, [2.0]), SUBSTEP)
        assert trace.product_unstabilized == pytest.approx(math.exp(1) / 0.125, rel=1e-12)
        assert trace.product_unstabilized == pytest.approx(21.7463, rel=1e-5)

    def test_matches_oracle(self):
        model = ConstantModel(0.5, 0.25)
        plan = _plan(0.0, [2.0])
        oracle = product_integral_oracle(model, 0.0, 2.0, plan, 1e-4)
        assert unstabilized_weight(model, plan, SUBSTEP).product_unstabilized == pytest.approx(oracle, rel=1e-3)

    def test_two_jumps_factorize(self):
        model = ConstantModel(0.5, 0.25)
        both = unstabilized_weight(model, _plan(0.0, [1.0, 3.0]), SUBSTEP)
        first = unstabilized_weight(model, _plan(0.0, [1.0]), SUBSTEP)
        second = unstabilized_weight(model, _plan(1.0, [3.0]), SUBSTEP)
        assert len(both.w_factors) == 2
        assert both.product_unstabilized == pytest.approx(first.product_unstabilized * second.product_unstabilized)

    @pytest.mark.parametrize("low,high", [(0.1, 0.2), (0.2, 0.4), (0.4, 0.9)])
    def test_rarer_treatment_weighs_more(self, low, high):
        plan = _plan(0.0, [1.0, 2.5])
        rare = unstabilized_weight(ConstantModel(0.5, low), plan, SUBSTEP).product_unstabilized
        common = unstabilized_weight(ConstantModel(0.5, high), plan, SUBSTEP).product_unstabilized
        assert rare > common
        assert rare / common == pytest.approx((high / low) ** 2, rel=1e-12)

    def test_floor_flags(self):
        trace = unstabilized_weight(ConstantModel(0.0, 0.0), _plan(0.0, [2.0]), SUBSTEP)
        assert trace.flags == ("lambda_floor@2", "pi_floor@2")
        assert np.all(np.isfinite(trace.w_factors))


class TestScaling:

    def test_single_jump(self):
        trace = scaling_factor(ConstantModel(0.5, 0.25), _plan(0.0, [2.0]), SUBSTEP)
        assert trace.product_scaling == pytest.approx(0.125 / math.e, rel=1e-12)
        assert trace.product_scaling == pytest.approx(0.045985, rel=1e-4)

    def test_zero_gap_unit(self):
        assert scaling_factor(ConstantModel(1.0, 1.0), _plan(1.0, [1.0]), SUBSTEP).product_scaling == pytest.approx(1.0)

    def test_cancels_identical_model(self):
        model = PiecewiseConstantModel(breaks=(0.0, 1.5), rates=(0.4, 1.2), probs=(0.5, 0.3))
        plan = _plan(0.0, [1.0, 2.0, 4.0])
        trace = plan_weights(model, model, plan, SUBSTEP)
        np.testing.assert_allclose(trace.w_factors * trace.xi_factors, 1.0, rtol=1e-12)
        assert trace.product_stabilized == pytest.approx(1.0, abs=1e-9)

    def test_oracle_is_reciprocal(self):
        model = ConstantModel(0.5, 0.25)
        plan = _plan(0.0, [2.0])
        assert scaling_oracle(model, 0.0, 2.0, plan, 1e-4) == pytest.approx(0.125 / math.e, rel=1e-3)


class TestStabilized:

    def test_no_jumps(self):
        plan = _plan(4.0, [], horizon=7.0)
        model = ConstantModel(0.7, 0.2)
        assert stabilized_weight(unstabilized_weight(model, plan, SUBSTEP), scaling_factor(model, plan, SUBSTEP)) == 1.0

    def test_single_jump_cancellation(self):
        model = ConstantModel(0.5, 0.25)
        plan = _plan(0.0, [2.0])
        w = unstabilized_weight(model, plan, SUBSTEP)
        xi = scaling_factor(model, plan, SUBSTEP)
        assert w.product_unstabilized * xi.product_scaling == pytest.approx(1.0)
        assert stabilized_weight(w, xi) == pytest.approx(1.0)

    def test_definitional_product(self):
        full = PiecewiseConstantModel(breaks=(0.0, 2.0), rates=(0.8, 0.3), probs=(0.6, 0.2))
        marginal = ConstantModel(0.5, 0.4)
        plan = _plan(0.0, [1.0, 3.0])
        trace = plan_weights(full, marginal, plan, SUBSTEP)
        assert trace.product_stabilized == pytest.approx(trace.product_unstabilized * trace.product_scaling)

    def test_mismatched_jumps(self):
        model = ConstantModel(0.5, 0.5)
        with pytest.raises(WeightMismatchError):
            stabilized_weight(
                unstabilized_weight(model, _plan(0.0, [1.0]), SUBSTEP),
                scaling_factor(model, _plan(0.0, [2.0]), SUBSTEP),
            )

    def test_trace_without_factors(self):
        with pytest.raises(ValidationError):
            WeightTrace(jump_times=()).product_unstabilized


# =============================================================================
# GRID MODEL
# =============================================================================
def test_grid_model_lookup():
    model = GridModel(step=1.0, event_prob=np.array([0.1, 0.4, 0.9]), arm_prob=np.array([[0.2, 0.7], [0.5, 0.5], [0.9, 0.1]]))
    assert model.intensity(np.array([0.0, 1.5, 7.0])).tolist() == pytest.approx([0.1, 0.4, 0.9])
    assert model.propensity(np.array([0.0]), np.array([[1, 0]]))[0] == pytest.approx(0.2 * 0.3)


# =============================================================================
# TRUNCATION
# =============================================================================
class TestTruncateNormalize:

    def test_all_equal(self):
        np.testing.assert_allclose(truncate_normalize([3.0] * 10), 1.0)

    def test_outlier_clipped_to_percentile(self):
        w = np.array([1.0] * 99 + [1000.0])
        out = truncate_normalize(w)
        high = np.percentile(w, 99)
        assert out[-1] / out[0] == pytest.approx(high)
        assert high < 1000.0

    def test_mean_one(self):
        rng = np.random.default_rng(0)
        out = truncate_normalize(rng.lognormal(0.0, 2.0, 500))
        assert abs(out.mean() - 1.0) < 1e-12

    def test_nonfinite_entries_stay_nan(self):
        out = truncate_normalize([1.0, np.nan, 3.0, np.inf])
        assert np.isnan(out[1]) and np.isnan(out[3])
        assert np.nanmean(out) == pytest.approx(1.0)

    def test_scale_invariant(self):
        w = np.random.default_rng(1).lognormal(0.0, 1.0, 200)
        np.testing.assert_array_equal(truncate_normalize(2.0 * w), truncate_normalize(w))
        np.testing.assert_array_equal(normalize_mean_one(2.0 * w), normalize_mean_one(w))

    def test_empty_batch(self):
        with pytest.raises(ValidationError):
            truncate_normalize([])


# =============================================================================
# REFERENCE PRODUCT INTEGRAL
# =============================================================================
class TestOracle:

    def test_constant_no_jumps(self):
        plan = _plan(0.0, [], horizon=2.0)
        assert product_integral_oracle(ConstantModel(0.5, 1.0), 0.0, 2.0, plan, 1e-4) == pytest.approx(math.e, rel=1e-4)

    def test_first_order_convergence(self):
        model = ConstantModel(0.5, 1.0)
        plan = _plan(0.0, [], horizon=2.0)
        coarse = abs(product_integral_oracle(model, 0.0, 2.0, plan, 0.01) - math.e)
        fine = abs(product_integral_oracle(model, 0.0, 2.0, plan, 0.005) - math.e)
        assert coarse / fine == pytest.approx(2.0, rel=0.05)

    def test_piecewise_closed_form(self):
        model = PiecewiseConstantModel(breaks=(0.0, 2.0), rates=(0.4, 1.2), probs=(0.5, 0.3))
        plan = _plan(0.0, [1.0, 2.5], values=[[1, 0], [0, 1]])
        closed = unstabilized_weight(model, plan, SUBSTEP, lambda_floor=1e-12, pi_floor=1e-12).product_unstabilized
        assert product_integral_oracle(model, 0.0, 2.5, plan, 1e-4) == pytest.approx(closed, rel=1e-3)

    def test_coarse_step_rejected(self):
        with pytest.raises(ValidationError):
            product_integral_oracle(ConstantModel(2.0, 1.0), 0.0, 1.0, _plan(0.0, [], horizon=1.0), 0.5)


def _random_scenario(rng):
    b1 = float(rng.choice([0.5, 1.0, 1.5, 2.0]))
    model = PiecewiseConstantModel(
        breaks=(0.0, b1),
        rates=tuple(rng.uniform(0.2, 1.2, 2)),
        probs=tuple(rng.uniform(0.2, 0.8, 2)),
    )
    grid = np.arange(1, 13) * 0.25
    jumps = sorted(rng.choice(grid, size=int(rng.integers(1, 4)), replace=False).tolist())
    values = [[int(v) for v in rng.integers(0, 2, 2)] for _ in jumps]
    return model, _plan(0.0, jumps, values=values)


def test_randomized_scenarios_match_oracle():
    rng = np.random.default_rng(42)
    for _ in range(20):
        model, plan = _random_scenario(rng)
        w = unstabilized_weight(model, plan, SUBSTEP, lambda_floor=1e-12, pi_floor=1e-12).product_unstabilized
        xi = scaling_factor(model, plan, SUBSTEP, lambda_floor=1e-12, pi_floor=1e-12).product_scaling
        assert product_integral_oracle(model, 0.0, plan.horizon, plan, 1e-4) == pytest.approx(w, rel=1e-3)
        assert scaling_oracle(model, 0.0, plan.horizon, plan, 1e-4) == pytest.approx(xi, rel=1e-3)


def test_randomized_survival_converges_first_order():
    rng = np.random.default_rng(7)
    for _ in range(20):
        model, plan = _random_scenario(rng)
        horizon = plan.horizon
        b1 = model.breaks[1]
        exact = math.exp(model.rates[0] * min(b1, horizon) + model.rates[1] * max(horizon - b1, 0.0))
        empty = _plan(0.0, [], horizon=horizon)
        coarse = abs(product_integral_oracle(model, 0.0, horizon, empty, 1e-3) - exact)
        fine = abs(product_integral_oracle(model, 0.0, horizon, empty, 5e-4) - exact)
        assert fine <= 0.6 * coarse


def test_weighted_least_squares_ignores_global_scale():
    rng = np.random.default_rng(3)
    X = np.column_stack([np.ones(40), rng.normal(size=(40, 2))])
    y = X @ np.array([0.5, -1.0, 2.0]) + rng.normal(scale=0.3, size=40)
    w = rng.lognormal(0.0, 1.0, 40)

    def fit(weights):
        root = np.sqrt(weights)[:, None]
        return np.linalg.lstsq(root * X, root[:, 0] * y, rcond=None)[0]

    np.testing.assert_allclose(fit(7.3 * w), fit(w), rtol=0, atol=1e-10)
    np.testing.assert_allclose(fit(normalize_mean_one(w)), fit(w), rtol=0, atol=1e-10)
