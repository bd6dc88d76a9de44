# backend/scipnet/simulator.py
"""
Confounded tumor-growth simulator.

Tumor volume follows a daily multiplicative update with logistic-type
growth, chemotherapy and radiotherapy kill terms. Treatment is assigned by a
policy that depends on the recent mean tumor diameter (time-varying
confounding); outcomes are observed at irregular, possibly informative,
times. Ground-truth potential outcomes under hard interventions come from
noise-free rollouts.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit
from scipy.stats import truncnorm

from .errors import NonpositiveVolumeError, ValidationError
from .logger import get_logger
from .schemas import (
    CARRYING_CAPACITY,
    EvalConfig,
    EvalRecord,
    InterventionPlan,
    PatientParams,
    SimConfig,
    Trajectory,
)
from .trajectory import EPS, HistoryPrefix
from .utils import derive_seed

logger = get_logger()

SeedLike = Union[int, np.random.Generator]

# (mean, std) of the growth and kill parameters
RHO = (7.00e-5, 7.23e-3)
ALPHA_R = (0.0398, 0.168)
ALPHA_C = (0.028, 7.00e-4)
SUBGROUPS = ("none", "A", "B")
SUBGROUP_BOOST = 1.1

N_ARMS = 2  # (chemo, radio)


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# =============================================================================
# GEOMETRY
# =============================================================================
def diameter(volume: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Sphere diameter (cm) of a volume (cm^3)."""
    return np.cbrt(6.0 * np.asarray(volume, dtype=float) / np.pi)


def volume(diam: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Sphere volume (cm^3) of a diameter (cm)."""
    return np.pi * np.asarray(diam, dtype=float) ** 3 / 6.0


def max_volume(d_max: float = 13.0) -> float:
    return float(volume(d_max))


# =============================================================================
# PARAMETERS
# =============================================================================
def _positive_normal(mean: float, std: float, rng: np.random.Generator) -> float:
    # normal truncated at zero
    return float(truncnorm.rvs((0.0 - mean) / std, np.inf, loc=mean, scale=std, random_state=rng))


def sample_params(seed: SeedLike) -> PatientParams:
    """
    Draw one patient's growth and kill parameters.

    Subgroup A raises the mean of alpha_r by 10%, subgroup B the mean of
    alpha_c.

    Args:
        seed: Integer seed or a numpy Generator to draw from

    Returns:
        PatientParams with K fixed and beta_r = 10 * alpha_r
    """
    rng = _rng(seed)
    subgroup = SUBGROUPS[int(rng.integers(len(SUBGROUPS)))]
    rho = _positive_normal(*RHO, rng)
    ar_mean = ALPHA_R[0] * (SUBGROUP_BOOST if subgroup == "A" else 1.0)
    ac_mean = ALPHA_C[0] * (SUBGROUP_BOOST if subgroup == "B" else 1.0)
    alpha_r = _positive_normal(ar_mean, ALPHA_R[1], rng)
    alpha_c = _positive_normal(ac_mean, ALPHA_C[1], rng)
    return PatientParams(
        rho=rho,
        K=CARRYING_CAPACITY,
        alpha_r=alpha_r,
        beta_r=10.0 * alpha_r,
        alpha_c=alpha_c,
        subgroup=subgroup,
    )


# =============================================================================
# DYNAMICS
# =============================================================================
def step_tumor(
    y: float,
    chemo: float,
    radio: float,
    params: PatientParams,
    eps: float = 0.0,
    y_min: float = 0.01,
    y_max: Optional[float] = None,
) -> float:
    """
    One-day tumor volume update.

    Y' = Y * (1 + rho*log(K/Y) - alpha_c*c - (alpha_r*d + beta_r*d^2) + eps)

    Args:
        y: Current volume (cm^3)
        chemo: Chemotherapy concentration given today (0 when not treated)
        radio: Radiation dose given today in Gy (0 when not treated)
        params: Patient parameters
        eps: Noise term
        y_min: Lower volume clamp
        y_max: Upper volume clamp; defaults to the volume of a 13 cm sphere

    Returns:
        Next-day volume clamped to [y_min, y_max]

    Raises:
        NonpositiveVolumeError: y <= 0
    """
    if not y > 0:
        raise NonpositiveVolumeError(y)
    factor = (
        1.0
        + params.rho * np.log(params.K / y)
        - params.alpha_c * chemo
        - (params.alpha_r * radio + params.beta_r * radio ** 2)
        + eps
    )
    upper = max_volume() if y_max is None else y_max
    return float(np.clip(y * factor, y_min, upper))


def _mean_diameter(volumes: Sequence[float]) -> float:
    if len(volumes) == 0:
        raise ValidationError("volume history is empty")
    return float(np.mean(diameter(np.asarray(volumes, dtype=float))))


def treatment_policy(volumes: Sequence[float], gamma: float, d_max: float = 13.0, window: int = 15) -> Tuple[float, float]:
    """
    Treatment probabilities for (chemo, radio) given the recent volumes.

    p = sigmoid(gamma / d_max * (mean diameter over the last `window` days - d_max / 2))
    """
    d_bar = _mean_diameter(list(volumes)[-window:])
    p = float(expit(gamma / d_max * (d_bar - d_max / 2.0)))
    return p, p


def observation_intensity(volumes: Sequence[float], omega: float, d_ref: float = 13.0, window: int = 15) -> float:
    """Daily observation probability sigmoid(omega * (mean diameter / d_ref - 1/2))."""
    if omega == 0:
        return 0.5
    d_bar = _mean_diameter(list(volumes)[-window:])
    return float(expit(omega * (d_bar / d_ref - 0.5)))


# =============================================================================
# SIMULATION
# =============================================================================
@dataclass(frozen=True)
class SubjectTruth:
    """Hidden state of one simulated subject: parameters and true volumes Y_0..Y_tau."""

    subject_id: int
    params: PatientParams
    volumes: np.ndarray


def _simulate_subject(subject_id: int, config: SimConfig, rng: np.random.Generator) -> Tuple[Trajectory, SubjectTruth]:
    tau = config.tau
    params = sample_params(rng)
    v_cap = max_volume(config.d_max)
    v0 = float(np.clip(volume(rng.uniform(config.init_diameter_low, config.init_diameter_high)), config.y_min, v_cap))

    # every day consumes the same draws so cohorts stay aligned across gamma/omega
    u_decide = rng.random(tau)
    u_arms = rng.random((tau, N_ARMS))
    noise = rng.normal(0.0, config.noise_std, tau) if config.noise_std > 0 else np.zeros(tau)
    u_observe = rng.random(tau + 1)

    volumes = np.empty(tau + 1)
    volumes[0] = v0
    a = np.zeros((tau + 1, N_ARMS), dtype=int)
    a_mask = np.zeros(tau + 1, dtype=int)
    for s in range(tau):
        history = volumes[max(0, s - config.window):s] if s > 0 else volumes[:1]
        if u_decide[s] < config.decision_rate:
            a_mask[s] = 1
            probs = treatment_policy(history, config.gamma, config.d_max, config.window)
            a[s] = (u_arms[s] < np.asarray(probs)).astype(int)
        volumes[s + 1] = step_tumor(
            volumes[s],
            a[s, 0] * config.chemo_dose,
            a[s, 1] * config.radio_dose,
            params,
            eps=noise[s],
            y_min=config.y_min,
            y_max=v_cap,
        )

    y_mask = np.zeros(tau + 1, dtype=int)
    y_mask[0] = 1  # baseline measurement
    for s in range(1, tau + 1):
        rate = observation_intensity(volumes[max(0, s - config.window + 1):s + 1], config.omega, config.d_ref, config.window)
        y_mask[s] = int(u_observe[s] < rate)

    y: List[List[Optional[float]]] = []
    x: List[List[Optional[float]]] = []
    previous: Optional[float] = None
    for s in range(tau + 1):
        if y_mask[s]:
            value = float(volumes[s])
            y.append([value])
            x.append([previous if previous is not None else value])
            previous = value
        else:
            y.append([None])
            x.append([None])

    trajectory = Trajectory(
        id=subject_id,
        tau=float(tau),
        times=[float(s) for s in range(tau + 1)],
        y=y,
        y_mask=y_mask.tolist(),
        x=x,
        a=a.tolist(),
        a_mask=a_mask.tolist(),
        static=[1.0 if params.subgroup == g else 0.0 for g in SUBGROUPS],
    )
    return trajectory, SubjectTruth(subject_id=subject_id, params=params, volumes=volumes)


def simulate_cohort(
    config: SimConfig,
    n_subjects: Optional[int] = None,
    stream: int = 0,
    id_offset: int = 0,
) -> Tuple[List[Trajectory], List[SubjectTruth]]:
    """
    Simulate a cohort and keep the hidden truth.

    Args:
        config: Simulator settings
        n_subjects: Overrides config.n_subjects
        stream: Cohort stream (0 = training, 1 = test) mixed into the seed
        id_offset: First subject id

    Returns:
        (trajectories, truths) in subject order
    """
    n = config.n_subjects if n_subjects is None else n_subjects
    children = np.random.SeedSequence([config.seed, stream]).spawn(n)
    trajectories: List[Trajectory] = []
    truths: List[SubjectTruth] = []
    for i, child in enumerate(children):
        traj, truth = _simulate_subject(id_offset + i, config, np.random.default_rng(child))
        trajectories.append(traj)
        truths.append(truth)

    if trajectories:
        treated = np.mean([np.mean(t.a) for t in trajectories])
        observed = np.mean([np.mean(t.y_mask) for t in trajectories])
        logger.simulation_summary(n, config.gamma, float(treated), float(observed))
    return trajectories, truths


def simulate(config: SimConfig) -> List[Trajectory]:
    """Simulate config.n_subjects trajectories from config.seed."""
    return simulate_cohort(config)[0]


# =============================================================================
# GROUND TRUTH AND TEST INTERVENTIONS
# =============================================================================
def ground_truth_capo(
    prefix: HistoryPrefix,
    plan: InterventionPlan,
    truth: SubjectTruth,
    config: Optional[SimConfig] = None,
) -> np.ndarray:
    """
    Noise-free potential outcome Y_horizon under a hard intervention.

    The rollout starts from the true volume at plan.start and applies exactly
    the plan's treatments on its jump days, no treatment on any other day.

    Raises:
        ValidationError: plan starts before the prefix cutoff or is off the day grid
    """
    config = config or SimConfig()
    if plan.start < prefix.cutoff - EPS:
        raise ValidationError(f"plan starts at {plan.start}, before prefix cutoff {prefix.cutoff}")
    start, end = int(round(plan.start)), int(round(plan.horizon))
    if abs(start - plan.start) > EPS or abs(end - plan.horizon) > EPS or end >= len(truth.volumes):
        raise ValidationError("plan must lie on the day grid within [0, tau]")

    jumps: Dict[int, List[int]] = {int(round(t)): v for t, v in zip(plan.jump_times, plan.values)}
    v_cap = max_volume(config.d_max)
    y = float(truth.volumes[start])
    for s in range(start, end):
        chemo, radio = jumps.get(s, [0, 0])
        y = step_tumor(y, chemo * config.chemo_dose, radio * config.radio_dose, truth.params, 0.0, config.y_min, v_cap)
    return np.array([y])


def sample_test_interventions(prefix: HistoryPrefix, horizon: int, count: int, seed: SeedLike, d_a: int = N_ARMS) -> List[InterventionPlan]:
    """
    Sample hard interventions irrespective of the history.

    Every day in [t, t + horizon) gets an i.i.d. uniform binary treatment vector.
    """
    if horizon < 1:
        raise ValidationError("horizon must be at least one day")
    if count < 1:
        raise ValidationError("count must be at least 1")
    rng = _rng(seed)
    t = prefix.cutoff
    days = [float(t + k) for k in range(horizon)]
    draws = rng.integers(0, 2, size=(count, horizon, d_a))
    return [
        InterventionPlan(start=t, jump_times=days, values=draws[i].tolist(), horizon=float(t + horizon))
        for i in range(count)
    ]


def build_eval_records(
    trajectories: Sequence[Trajectory],
    truths: Sequence[SubjectTruth],
    sim_config: SimConfig,
    eval_config: EvalConfig,
) -> List[EvalRecord]:
    """
    Evaluation records for a test cohort.

    One random cutoff per subject, shared across horizons, and
    eval_config.n_plans sampled plans per (subject, horizon).
    """
    horizons = eval_config.horizons
    last_cutoff = sim_config.tau - max(horizons)
    if last_cutoff < 1:
        raise ValidationError("largest horizon leaves no room for a prefix", key="evaluation.horizons")

    records: List[EvalRecord] = []
    for traj, truth in zip(trajectories, truths):
        rng = np.random.default_rng(derive_seed(sim_config.seed, 1, traj.id))
        cutoff = float(rng.integers(1, last_cutoff + 1))
        prefix = HistoryPrefix(trajectory=traj, cutoff=cutoff)
        for delta in horizons:
            plans = sample_test_interventions(prefix, delta, eval_config.n_plans, rng)
            for plan in plans:
                records.append(
                    EvalRecord(
                        subject_id=traj.id,
                        prefix_cutoff=cutoff,
                        horizon=delta,
                        intervention_plan=plan,
                        ground_truth_y_tau=ground_truth_capo(prefix, plan, truth, sim_config).tolist(),
                    )
                )
    return records
