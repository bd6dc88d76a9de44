# backend/scipnet/weights.py
"""
Inverse-propensity weights for hard interventions in continuous time.

Per jump t*_j of an intervention plan starting at t (t*_0 = t):

    W_j  = exp(int_[t*_{j-1}, t*_j) lambda(s) ds) / (lambda(t*_j) * pi(a*_j | t*_j))
    Xi_j = lambda_m(t*_j) * pi_m(a*_j | t*_j) / exp(int_[t*_{j-1}, t*_j) lambda_m(s) ds)

where (lambda, pi) condition on the full history and (lambda_m, pi_m) on the
treatment history only. The stabilized weight is prod_j W_j * Xi_j.
"""

from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import ValidationError, WeightMismatchError
from .schemas import InterventionPlan

LAMBDA_FLOOR = 1e-3
PI_FLOOR = 1e-3


# =============================================================================
# MODELS
# =============================================================================
class IntensityPropensityModel(Protocol):
    """Treatment intensity (per day) and propensity of a treatment vector, for one history."""

    def intensity(self, s: np.ndarray) -> np.ndarray:
        ...

    def propensity(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class ConstantModel:
    """Constant intensity `rate` and constant propensity `prob` for every treatment vector."""

    rate: float
    prob: float

    def intensity(self, s: np.ndarray) -> np.ndarray:
        return np.full(np.shape(s), self.rate, dtype=float)

    def propensity(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return np.full(np.shape(s), self.prob, dtype=float)


@dataclass(frozen=True)
class PiecewiseConstantModel:
    """
    Intensity and propensity constant between breakpoints.

    Segment k covers [breaks[k], breaks[k+1]); times past the last break use
    the last segment.
    """

    breaks: Tuple[float, ...]
    rates: Tuple[float, ...]
    probs: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not (len(self.breaks) == len(self.rates) == len(self.probs)):
            raise ValidationError("breaks, rates and probs differ in length")

    def _segment(self, s: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.breaks), np.asarray(s, dtype=float), side="right") - 1
        return np.clip(idx, 0, len(self.breaks) - 1)

    def intensity(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)[self._segment(s)]

    def propensity(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)[self._segment(s)]


@dataclass(frozen=True)
class GridModel:
    """
    Network outputs tabulated on a uniform grid.

    event_prob[g] is the probability of a treatment decision in the bin
    starting at grid point g (intensity = p / step); arm_prob[g, k] is the
    probability that arm k fires at a decision. Arms are independent.
    """

    step: float
    event_prob: np.ndarray
    arm_prob: np.ndarray

    def _index(self, s: np.ndarray) -> np.ndarray:
        idx = np.floor(np.asarray(s, dtype=float) / self.step + 1e-9).astype(int)
        return np.clip(idx, 0, len(self.event_prob) - 1)

    def intensity(self, s: np.ndarray) -> np.ndarray:
        return self.event_prob[self._index(s)] / self.step

    def propensity(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        probs = self.arm_prob[self._index(s)]
        a = np.asarray(a, dtype=float).reshape(probs.shape)
        return np.prod(np.where(a > 0.5, probs, 1.0 - probs), axis=-1)


# =============================================================================
# QUADRATURE
# =============================================================================
def integrated_intensity(
    model: IntensityPropensityModel,
    t0: float,
    t1: float,
    substep: float,
    floor: Optional[float] = LAMBDA_FLOOR,
) -> float:
    """
    Left-endpoint Riemann sum of the intensity over [t0, t1).

    The last bin is shortened to end at t1.

    Args:
        model: Intensity model
        t0: Interval start
        t1: Interval end (>= t0)
        substep: Quadrature step
        floor: Lower bound applied to the intensity; None disables it

    Returns:
        Nonnegative integral estimate
    """
    if t1 < t0:
        raise ValidationError(f"integration bounds reversed: [{t0}, {t1})")
    if substep <= 0:
        raise ValidationError("substep must be positive")
    n = int(np.ceil((t1 - t0) / substep - 1e-9))
    if n <= 0:
        return 0.0
    starts = t0 + np.arange(n) * substep
    widths = np.minimum(substep, t1 - starts)
    rates = model.intensity(starts)
    if floor is not None:
        rates = np.maximum(rates, floor)
    return float(np.sum(rates * widths))


# =============================================================================
# TRACES
# =============================================================================
@dataclass(frozen=True)
class WeightTrace:
    """Per-jump factors of one plan; either side may be missing."""

    jump_times: Tuple[float, ...]
    w_factors: Optional[np.ndarray] = None
    xi_factors: Optional[np.ndarray] = None
    flags: Tuple[str, ...] = ()

    @property
    def product_unstabilized(self) -> float:
        if self.w_factors is None:
            raise ValidationError("trace has no unstabilized factors")
        return float(np.prod(self.w_factors))

    @property
    def product_scaling(self) -> float:
        if self.xi_factors is None:
            raise ValidationError("trace has no scaling factors")
        return float(np.prod(self.xi_factors))

    @property
    def product_stabilized(self) -> float:
        return float(np.prod(self.w_factors * self.xi_factors)) if self.jump_times else 1.0


def _jump_terms(
    model: IntensityPropensityModel,
    plan: InterventionPlan,
    substep: float,
    lambda_floor: float,
    pi_floor: float,
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """exp(gap integral) and floored lambda * pi per jump."""
    times = np.asarray(plan.jump_times, dtype=float)
    if len(times) == 0:
        return np.zeros(0), np.zeros(0), []
    previous = np.concatenate([[plan.start], times[:-1]])
    gaps = np.array([integrated_intensity(model, p, t, substep, lambda_floor) for p, t in zip(previous, times)])

    rates = model.intensity(times)
    probs = model.propensity(times, np.asarray(plan.values, dtype=float))
    flags: List[str] = []
    for t, lam, pi in zip(times, rates, probs):
        if lam < lambda_floor:
            flags.append(f"lambda_floor@{t:g}")
        if pi < pi_floor:
            flags.append(f"pi_floor@{t:g}")
    return np.exp(gaps), np.maximum(rates, lambda_floor) * np.maximum(probs, pi_floor), flags


def unstabilized_weight(
    model: IntensityPropensityModel,
    plan: InterventionPlan,
    substep: float,
    lambda_floor: float = LAMBDA_FLOOR,
    pi_floor: float = PI_FLOOR,
) -> WeightTrace:
    """
    Unstabilized factors W_j for the jumps of `plan` (gaps measured from plan.start).

    Values below the floors are replaced by the floor and flagged.
    """
    survival, density, flags = _jump_terms(model, plan, substep, lambda_floor, pi_floor)
    return WeightTrace(jump_times=tuple(plan.jump_times), w_factors=survival / density, flags=tuple(flags))


def scaling_factor(
    model: IntensityPropensityModel,
    plan: InterventionPlan,
    substep: float,
    lambda_floor: float = LAMBDA_FLOOR,
    pi_floor: float = PI_FLOOR,
) -> WeightTrace:
    """Scaling factors Xi_j from a treatment-history-only model."""
    survival, density, flags = _jump_terms(model, plan, substep, lambda_floor, pi_floor)
    return WeightTrace(jump_times=tuple(plan.jump_times), xi_factors=density / survival, flags=tuple(flags))


def combine(w_trace: WeightTrace, xi_trace: WeightTrace) -> WeightTrace:
    """Merge an unstabilized and a scaling trace over the same jumps."""
    if len(w_trace.jump_times) != len(xi_trace.jump_times) or not np.allclose(
        w_trace.jump_times, xi_trace.jump_times, atol=1e-9
    ):
        raise WeightMismatchError(
            f"jump times differ: {list(w_trace.jump_times)} vs {list(xi_trace.jump_times)}"
        )
    return WeightTrace(
        jump_times=w_trace.jump_times,
        w_factors=w_trace.w_factors,
        xi_factors=xi_trace.xi_factors,
        flags=w_trace.flags + xi_trace.flags,
    )


def stabilized_weight(w_trace: WeightTrace, xi_trace: WeightTrace) -> float:
    """
    Stabilized weight prod_j Xi_j * W_j.

    Raises:
        WeightMismatchError: traces disagree on jump times
    """
    return combine(w_trace, xi_trace).product_stabilized


def plan_weights(
    full_model: IntensityPropensityModel,
    treatment_model: IntensityPropensityModel,
    plan: InterventionPlan,
    substep: float,
    lambda_floor: float = LAMBDA_FLOOR,
    pi_floor: float = PI_FLOOR,
) -> WeightTrace:
    """Both traces of a plan, combined."""
    return combine(
        unstabilized_weight(full_model, plan, substep, lambda_floor, pi_floor),
        scaling_factor(treatment_model, plan, substep, lambda_floor, pi_floor),
    )


# =============================================================================
# BATCH POST-PROCESSING
# =============================================================================
def truncate_normalize(weights: Sequence[float], lo_pct: float = 1.0, hi_pct: float = 99.0) -> np.ndarray:
    """
    Clip weights to the [lo_pct, hi_pct] percentiles and rescale to mean 1.

    Non-finite entries are left out of the statistics and stay NaN.

    Raises:
        ValidationError: empty batch or no finite weight
    """
    w = np.asarray(weights, dtype=float)
    finite = np.isfinite(w)
    if w.size == 0 or not finite.any():
        raise ValidationError("weight batch is empty")
    low, high = np.percentile(w[finite], [lo_pct, hi_pct])
    out = np.full(w.shape, np.nan)
    clipped = np.clip(w[finite], low, high)
    out[finite] = clipped / clipped.mean()
    return out


def normalize_mean_one(weights: Sequence[float]) -> np.ndarray:
    """Rescale finite weights to mean 1 without clipping."""
    return truncate_normalize(weights, 0.0, 100.0)


# =============================================================================
# REFERENCE PRODUCT INTEGRAL
# =============================================================================
def product_integral_oracle(
    model: IntensityPropensityModel,
    t0: float,
    t1: float,
    plan: InterventionPlan,
    h: float,
) -> float:
    """
    Discretized likelihood-ratio product over [t0, t1] with bin width h.

    Bins without a jump contribute 1 / (1 - lambda * h); each jump in [t0, t1]
    contributes 1 / (lambda * pi). Converges to prod_j W_j at first order in h.
    No floors are applied.
    """
    if h <= 0:
        raise ValidationError("h must be positive")
    n = int(round((t1 - t0) / h))
    starts = t0 + np.arange(n) * h
    jumps = [(t, v) for t, v in zip(plan.jump_times, plan.values) if t0 - 1e-12 <= t <= t1 + 1e-12]
    jump_bins = {int(np.floor((t - t0) / h + 1e-9)) for t, _ in jumps}
    keep = np.ones(n, dtype=bool)
    keep[[k for k in jump_bins if 0 <= k < n]] = False

    hazard = model.intensity(starts[keep]) * h
    if np.any(hazard >= 1.0):
        raise ValidationError("h too coarse: lambda * h >= 1")
    log_total = -np.sum(np.log1p(-hazard))
    for t, v in jumps:
        s = np.array([t])
        log_total -= np.log(model.intensity(s)[0] * model.propensity(s, np.asarray([v], dtype=float))[0])
    return float(np.exp(log_total))


def scaling_oracle(
    model: IntensityPropensityModel,
    t0: float,
    t1: float,
    plan: InterventionPlan,
    h: float,
) -> float:
    """Reciprocal of the product integral under a treatment-history-only model."""
    return 1.0 / product_integral_oracle(model, t0, t1, plan, h)
