# backend/scipnet/schemas.py
"""
Pydantic schemas for SCIP-Net records and configuration.

Everything that crosses a file boundary (trajectories, intervention plans,
evaluation records, weight cache lines, run manifests) and every configuration
section is declared here.
"""

import math
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Variant = Literal["scip", "cip", "unweighted"]
Subgroup = Literal["none", "A", "B"]

CARRYING_CAPACITY = 30.0


# =============================================================================
# DATA RECORDS
# =============================================================================
class Trajectory(BaseModel):
    """
    One subject's irregular time series on a base grid.

    Missing outcomes/covariates are stored as None (null in JSON-lines) and are
    never read; `validate` in trajectory.py reports invariant violations.
    """
    model_config = ConfigDict(frozen=True)

    id: int
    tau: float
    times: List[float] = Field(default_factory=list)
    y: List[List[Optional[float]]] = Field(default_factory=list)
    y_mask: List[int] = Field(default_factory=list)
    x: List[List[Optional[float]]] = Field(default_factory=list)
    a: List[List[int]] = Field(default_factory=list)
    a_mask: List[int] = Field(default_factory=list)
    static: List[float] = Field(default_factory=list)


class InterventionPlan(BaseModel):
    """
    Hard intervention: step-wise constant treatment function.

    Jump j assigns `values[j]` at `jump_times[j]`; no treatment is given at
    any other decision time in [start, horizon].
    """
    model_config = ConfigDict(frozen=True)

    start: float
    jump_times: List[float] = Field(default_factory=list)
    values: List[List[int]] = Field(default_factory=list)
    horizon: float

    @model_validator(mode="after")
    def _check_jumps(self) -> "InterventionPlan":
        if self.horizon < self.start:
            raise ValueError("horizon before start")
        if len(self.jump_times) != len(self.values):
            raise ValueError("jump_times and values differ in length")
        previous = -math.inf
        for t in self.jump_times:
            if t <= previous:
                raise ValueError("jump_times not strictly increasing")
            if t < self.start or t > self.horizon:
                raise ValueError(f"jump time {t} outside [{self.start}, {self.horizon}]")
            previous = t
        for vector in self.values:
            if any(v not in (0, 1) for v in vector):
                raise ValueError("treatment values must be 0 or 1")
        return self


class PatientParams(BaseModel):
    """Tumor growth parameters of one simulated patient."""
    model_config = ConfigDict(frozen=True)

    rho: float
    K: float = CARRYING_CAPACITY
    alpha_r: float
    beta_r: float
    alpha_c: float
    subgroup: Subgroup = "none"

    @model_validator(mode="after")
    def _check_params(self) -> "PatientParams":
        if self.K != CARRYING_CAPACITY:
            raise ValueError(f"carrying capacity must be {CARRYING_CAPACITY}")
        if self.beta_r != 10.0 * self.alpha_r:
            raise ValueError("beta_r must equal 10 * alpha_r")
        for name in ("rho", "alpha_r", "beta_r", "alpha_c"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")
        return self


class EvalRecord(BaseModel):
    """A test prefix, one sampled hard intervention and its ground truth."""
    model_config = ConfigDict(frozen=True)

    subject_id: int
    prefix_cutoff: float
    horizon: int
    intervention_plan: InterventionPlan
    ground_truth_y_tau: List[float]


class WeightRecord(BaseModel):
    """One line of the weight cache file."""

    instance_id: str
    jump_times: List[float]
    W_factors: List[float]
    Xi_factors: List[float]
    stabilized: float
    unstabilized: float
    weight: float
    flags: List[str] = Field(default_factory=list)


class PredictionRecord(BaseModel):
    """Per-pair prediction dump line (normalized outcome units)."""

    variant: str
    gamma: float
    omega: float
    horizon: int
    seed: int
    subject_id: int
    prefix_cutoff: float
    plan_index: int
    prediction: List[float]
    ground_truth: List[float]


class RunManifest(BaseModel):
    """Emitted for every CLI run before any output is touched."""

    command: str
    config: Dict[str, Any]
    seed: Optional[int] = None
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    started_at: str
    finished_at: Optional[str] = None
    wall_clock_seconds: Optional[float] = None
    artifact_version: str
    status: Literal["running", "ok", "failed"] = "running"


# =============================================================================
# CONFIGURATION SECTIONS
# =============================================================================
class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SimConfig(_Section):
    """Tumor growth simulator settings ([simulation] section)."""

    n_subjects: int = Field(1000, ge=1, description="training subjects to simulate")
    tau: int = Field(30, ge=1, description="days per trajectory")
    gamma: float = Field(8.0, ge=0.0, description="confounding strength")
    omega: float = Field(0.0, description="observation informativeness")
    d_max: float = Field(13.0, gt=0.0, description="maximum tumor diameter (cm)")
    d_ref: float = Field(13.0, gt=0.0, description="reference diameter (cm) for sampling")
    window: int = Field(15, ge=1, description="days averaged by policy/observation")
    chemo_dose: float = Field(5.0, ge=0.0, description="chemo concentration when fired")
    radio_dose: float = Field(2.0, ge=0.0, description="radiation dose (Gy) when fired")
    noise_std: float = Field(0.01, ge=0.0, description="std of the multiplicative noise")
    decision_rate: float = Field(1.0, gt=0.0, le=1.0, description="daily decision probability")
    y_min: float = Field(0.01, gt=0.0, description="volume floor (cm^3)")
    init_diameter_low: float = Field(1.0, gt=0.0, description="initial diameter lower bound")
    init_diameter_high: float = Field(13.0, gt=0.0, description="initial diameter upper bound")
    seed: int = Field(0, ge=0, description="master seed")

    @model_validator(mode="after")
    def _check_ranges(self) -> "SimConfig":
        if self.tau < self.window:
            raise ValueError("tau must be >= window")
        if self.init_diameter_low >= self.init_diameter_high:
            raise ValueError("init_diameter_low must be < init_diameter_high")
        if self.init_diameter_high > self.d_max:
            raise ValueError("init_diameter_high must be <= d_max")
        return self


LR_GRID = (0.01, 0.001, 0.0001)
BATCH_GRID = (64, 128, 256)
DECODER_BATCH_GRID = (256, 512, 1024)
DROPOUT_GRID = (0.1, 0.2)
CLIP_GRID = (0.5, 1.0, 2.0)


def _on_grid(value: float, grid: tuple, name: str) -> float:
    if not any(math.isclose(value, g) for g in grid):
        raise ValueError(f"{name} must be one of {list(grid)}")
    return value


class TrainConfig(_Section):
    """Staged training settings ([training] section)."""

    epochs: int = Field(50, ge=0)
    lr: float = Field(0.001, description="Adam learning rate")
    batch_size: int = Field(64, description="subjects per batch for S/W/E")
    decoder_batch_size: int = Field(256, description="instances per decoder batch")
    clip_norm: float = Field(1.0, description="max global gradient norm")
    latent_factor: int = Field(2, ge=1, description="latent size = factor * input size")
    hidden_dim: int = Field(32, ge=1, description="vector field hidden width")
    dropout: float = Field(0.1, description="vector field dropout")
    variant: Variant = "scip"
    horizons: List[int] = Field(default_factory=lambda: [1, 2, 3])
    seed: int = Field(0, ge=0)
    substeps: int = Field(1, ge=1, description="Euler sub-steps per day")
    val_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    truncate_low: float = Field(1.0, ge=0.0, le=100.0, description="lower weight percentile")
    truncate_high: float = Field(99.0, ge=0.0, le=100.0, description="upper weight percentile")
    lambda_floor: float = Field(1e-3, gt=0.0)
    pi_floor: float = Field(1e-3, gt=0.0)

    @field_validator("lr")
    @classmethod
    def _lr_grid(cls, v: float) -> float:
        return _on_grid(v, LR_GRID, "lr")

    @field_validator("batch_size")
    @classmethod
    def _batch_grid(cls, v: int) -> int:
        return int(_on_grid(v, BATCH_GRID, "batch_size"))

    @field_validator("decoder_batch_size")
    @classmethod
    def _decoder_batch_grid(cls, v: int) -> int:
        return int(_on_grid(v, DECODER_BATCH_GRID, "decoder_batch_size"))

    @field_validator("dropout")
    @classmethod
    def _dropout_grid(cls, v: float) -> float:
        return _on_grid(v, DROPOUT_GRID, "dropout")

    @field_validator("clip_norm")
    @classmethod
    def _clip_grid(cls, v: float) -> float:
        return _on_grid(v, CLIP_GRID, "clip_norm")

    @field_validator("horizons")
    @classmethod
    def _positive_horizons(cls, v: List[int]) -> List[int]:
        if not v or any(h < 1 for h in v):
            raise ValueError("horizons must be positive day counts")
        return sorted(set(v))

    @model_validator(mode="after")
    def _check_percentiles(self) -> "TrainConfig":
        if self.truncate_low >= self.truncate_high:
            raise ValueError("truncate_low must be < truncate_high")
        return self


class EvalConfig(_Section):
    """Test cohort and intervention sampling ([evaluation] section)."""

    n_test_subjects: int = Field(1000, ge=1)
    n_plans: int = Field(50, ge=1, description="interventions per test prefix")
    horizons: List[int] = Field(default_factory=lambda: [1, 2, 3])

    @field_validator("horizons")
    @classmethod
    def _positive_horizons(cls, v: List[int]) -> List[int]:
        if not v or any(h < 1 for h in v):
            raise ValueError("horizons must be positive day counts")
        return sorted(set(v))


class SweepConfig(_Section):
    """Full-factorial experiment grid ([sweep] section)."""

    gammas: List[float] = Field(default_factory=lambda: [4.0, 8.0])
    omegas: List[float] = Field(default_factory=lambda: [0.0])
    horizons: List[int] = Field(default_factory=lambda: [1, 2, 3])
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    variants: List[Variant] = Field(default_factory=lambda: ["scip", "cip", "unweighted"])

    @field_validator("gammas")
    @classmethod
    def _nonnegative_gammas(cls, v: List[float]) -> List[float]:
        if not v or any(g < 0 for g in v):
            raise ValueError("gammas must be nonnegative")
        return v

    @field_validator("horizons")
    @classmethod
    def _positive_horizons(cls, v: List[int]) -> List[int]:
        if not v or any(h < 1 for h in v):
            raise ValueError("horizons must be positive day counts")
        return sorted(set(v))


class ResolvedConfig(BaseModel):
    """All configuration sections with defaults materialized."""

    simulation: SimConfig = Field(default_factory=SimConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
