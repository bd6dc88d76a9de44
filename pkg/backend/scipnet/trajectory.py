# backend/scipnet/trajectory.py
"""
Core data model for irregular trajectories.

Histories use left-limit semantics: a prefix at cutoff t holds every event
with timestamp < t. Control paths are the piecewise-linear multichannel
paths that drive the neural CDEs.
"""

import json
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from .errors import EmptyChannelError, ValidationError
from .schemas import InterventionPlan, Trajectory
from .utils import PathLike, read_jsonl, write_jsonl

EPS = 1e-9


# =============================================================================
# ARRAY VIEW
# =============================================================================
def _matrix(rows: Sequence[Sequence[Optional[float]]]) -> np.ndarray:
    if len(rows) == 0:
        return np.zeros((0, 0))
    return np.array(
        [[np.nan if v is None else float(v) for v in row] for row in rows], dtype=float
    )


@dataclass(frozen=True)
class TrajectoryArrays:
    """Numpy view of a Trajectory; missing values are NaN."""

    id: int
    tau: float
    times: np.ndarray
    y: np.ndarray
    y_mask: np.ndarray
    x: np.ndarray
    a: np.ndarray
    a_mask: np.ndarray
    static: np.ndarray

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "TrajectoryArrays":
        return cls(
            id=traj.id,
            tau=float(traj.tau),
            times=np.asarray(traj.times, dtype=float),
            y=_matrix(traj.y),
            y_mask=np.asarray(traj.y_mask, dtype=int).astype(bool),
            x=_matrix(traj.x),
            a=_matrix(traj.a),
            a_mask=np.asarray(traj.a_mask, dtype=int).astype(bool),
            static=np.asarray(traj.static, dtype=float),
        )

    @property
    def d_a(self) -> int:
        return self.a.shape[1] if self.a.ndim == 2 else 0


TrajectoryLike = Union[Trajectory, TrajectoryArrays]


def as_arrays(traj: TrajectoryLike) -> TrajectoryArrays:
    if isinstance(traj, TrajectoryArrays):
        return traj
    return TrajectoryArrays.from_trajectory(traj)


# =============================================================================
# VALIDATION
# =============================================================================
def validate(traj: Trajectory) -> List[str]:
    """
    Check a trajectory against its invariants.

    Args:
        traj: Trajectory to check

    Returns:
        List of violations; empty means the trajectory is valid
    """
    problems: List[str] = []
    n = len(traj.times)

    for name in ("y", "y_mask", "x", "a", "a_mask"):
        length = len(getattr(traj, name))
        if length != n:
            problems.append(f"length mismatch: {name} has {length} entries, times has {n}")

    if any(b <= a for a, b in zip(traj.times, traj.times[1:])):
        problems.append("times not strictly increasing")
    if any(t < -EPS or t > traj.tau + EPS for t in traj.times):
        problems.append("time outside [0, tau]")

    for name in ("y_mask", "a_mask"):
        if any(m not in (0, 1) for m in getattr(traj, name)):
            problems.append(f"{name} entries must be 0 or 1")

    for i, (vector, decided) in enumerate(zip(traj.a, traj.a_mask)):
        if any(v not in (0, 1) for v in vector):
            problems.append(f"treatment not binary at index {i}")
        if not decided and any(v != 0 for v in vector):
            problems.append(f"treatment outside decision time at index {i}")

    for i, (vector, observed) in enumerate(zip(traj.y, traj.y_mask)):
        if observed and any(v is None for v in vector):
            problems.append(f"observed outcome missing at index {i}")

    for name in ("y", "x", "a"):
        widths = {len(row) for row in getattr(traj, name)}
        if len(widths) > 1:
            problems.append(f"{name} rows have inconsistent widths {sorted(widths)}")

    return problems


# =============================================================================
# HISTORY PREFIX
# =============================================================================
@dataclass(frozen=True)
class HistoryPrefix:
    """All events of `trajectory` with timestamp strictly before `cutoff`."""

    trajectory: Trajectory
    cutoff: float

    def times(self) -> np.ndarray:
        arr = as_arrays(self.trajectory)
        return arr.times[arr.times < self.cutoff - EPS]


# =============================================================================
# OUTCOME SCALING
# =============================================================================
@dataclass(frozen=True)
class OutcomeScaler:
    """z-score transform fitted on observed training outcomes."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, trajectories: Iterable[TrajectoryLike]) -> "OutcomeScaler":
        values = []
        for traj in trajectories:
            arr = as_arrays(traj)
            if arr.y.size:
                values.append(arr.y[arr.y_mask].ravel())
        if not values:
            return cls()
        pooled = np.concatenate(values)
        pooled = pooled[np.isfinite(pooled)]
        if pooled.size == 0:
            return cls()
        std = float(pooled.std())
        return cls(mean=float(pooled.mean()), std=std if std > 0 else 1.0)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.std + self.mean


# =============================================================================
# CONTROL PATH
# =============================================================================
@dataclass(frozen=True)
class ControlPath:
    """Multichannel path sampled on a uniform grid over [0, tau]."""

    grid: np.ndarray
    values: np.ndarray
    channels: Tuple[str, ...]

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.channels.index(name)]

    def evaluate(self, s: float) -> np.ndarray:
        """Linear interpolation between grid points."""
        return np.array([np.interp(s, self.grid, self.values[:, c]) for c in range(self.values.shape[1])])


def make_grid(tau: float, step: float) -> np.ndarray:
    """Uniform grid 0, h, 2h, ..., tau; tau must be a multiple of h."""
    if step <= 0:
        raise ValidationError("step must be positive")
    n = int(round(tau / step))
    if n < 0 or abs(n * step - tau) > 1e-9 * max(1.0, tau):
        raise ValidationError(f"tau={tau} is not a multiple of step={step}")
    return np.round(np.arange(n + 1) * step, 12)


def grid_index(grid: np.ndarray, s: float) -> int:
    """Index of grid point s; raises if s is not on the grid."""
    idx = int(np.searchsorted(grid, s - 1e-7, side="left"))
    if idx >= len(grid) or abs(grid[idx] - s) > 1e-7:
        raise ValidationError(f"time {s} is not on the path grid")
    return idx


def channel_names(d_y: int, d_x: int, d_a: int, treatment_only: bool = False) -> Tuple[str, ...]:
    treatments = tuple(f"a{j}" for j in range(d_a))
    if treatment_only:
        return ("time",) + treatments + ("n_a",)
    return (
        ("time",)
        + tuple(f"y{j}" for j in range(d_y))
        + tuple(f"x{j}" for j in range(d_x))
        + treatments
        + ("n_x", "n_a")
    )


def _treatment_columns(grid: np.ndarray, dec_times: np.ndarray, dec_values: np.ndarray, d_a: int, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    # decisions strictly before each grid point (left limit)
    count = np.searchsorted(dec_times, grid - EPS, side="left")
    held = np.zeros((len(grid), d_a))
    has = count > 0
    if has.any():
        held[has] = dec_values[count[has] - 1]
    return held, count / tau


def _interpolated(grid: np.ndarray, times: np.ndarray, values: np.ndarray, name: str) -> np.ndarray:
    present = np.isfinite(values)
    if not present.any():
        raise EmptyChannelError(name)
    # np.interp holds the end values constant outside the observed range
    return np.interp(grid, times[present], values[present])


def build_control_path(
    traj: TrajectoryLike,
    cutoff: float,
    step: float,
    treatment_only: bool = False,
    scaler: Optional[OutcomeScaler] = None,
) -> ControlPath:
    """
    Build the control path of the history prefix before `cutoff`.

    Args:
        traj: Trajectory (or its array view)
        cutoff: Only events with timestamp < cutoff enter
        step: Grid step h (days)
        treatment_only: Keep only time, treatment and N^a channels
        scaler: Optional outcome scaler applied to y and x channels

    Returns:
        ControlPath over [0, tau]

    Raises:
        EmptyChannelError: No observed point before cutoff in a required channel
    """
    arr = as_arrays(traj)
    if cutoff > arr.tau + EPS:
        raise ValidationError(f"cutoff {cutoff} after tau {arr.tau}")
    grid = make_grid(arr.tau, step)
    before = arr.times < cutoff - EPS

    decided = before & arr.a_mask
    held, n_a = _treatment_columns(grid, arr.times[decided], arr.a[decided] if arr.a.size else np.zeros((0, 0)), arr.d_a, arr.tau)

    columns = [grid / arr.tau]
    if not treatment_only:
        observed = before & arr.y_mask
        if not observed.any():
            raise EmptyChannelError("y")
        obs_times = arr.times[observed]
        y = arr.y[observed]
        x = arr.x[observed] if arr.x.size else np.zeros((len(obs_times), 0))
        if scaler is not None:
            y, x = scaler.transform(y), scaler.transform(x)
        columns += [_interpolated(grid, obs_times, y[:, j], f"y{j}") for j in range(y.shape[1])]
        columns += [_interpolated(grid, obs_times, x[:, j], f"x{j}") for j in range(x.shape[1])]
        columns += [held[:, j] for j in range(arr.d_a)]
        n_x = np.searchsorted(obs_times, grid + EPS, side="left") / arr.tau
        columns += [n_x, n_a]
        names = channel_names(y.shape[1], x.shape[1], arr.d_a)
    else:
        columns += [held[:, j] for j in range(arr.d_a)]
        columns.append(n_a)
        names = channel_names(0, 0, arr.d_a, treatment_only=True)

    return ControlPath(grid=grid, values=np.column_stack(columns), channels=names)


def build_plan_path(traj: TrajectoryLike, plan: InterventionPlan, step: float, cutoff: Optional[float] = None) -> ControlPath:
    """
    Treatment-side path where the plan replaces every decision from plan.start on.

    Factual decisions before plan.start are kept; after plan.start only the
    plan's jumps exist. With `cutoff`, factual decisions at or after the
    cutoff are dropped as well, so nothing recorded after the history prefix
    reaches the path.

    Raises:
        ValidationError: plan times not on the grid or beyond tau
    """
    arr = as_arrays(traj)
    grid = make_grid(arr.tau, step)
    if plan.horizon > arr.tau + EPS:
        raise ValidationError(f"plan horizon {plan.horizon} after tau {arr.tau}")
    grid_index(grid, plan.start)
    grid_index(grid, plan.horizon)
    for t in plan.jump_times:
        grid_index(grid, t)

    keep_before = plan.start if cutoff is None else min(plan.start, cutoff)
    factual = arr.a_mask & (arr.times < keep_before - EPS)
    d_a = arr.d_a if arr.d_a else (len(plan.values[0]) if plan.values else 0)
    plan_values = np.asarray(plan.values, dtype=float).reshape(len(plan.jump_times), d_a)
    factual_values = arr.a[factual] if arr.a.size else np.zeros((0, d_a))
    dec_times = np.concatenate([arr.times[factual], np.asarray(plan.jump_times, dtype=float)])
    dec_values = np.concatenate([factual_values.reshape(-1, d_a), plan_values])

    held, n_a = _treatment_columns(grid, dec_times, dec_values, d_a, arr.tau)
    values = np.column_stack([grid / arr.tau] + [held[:, j] for j in range(d_a)] + [n_a])
    return ControlPath(grid=grid, values=values, channels=channel_names(0, 0, d_a, treatment_only=True))


# =============================================================================
# TRAINING / EVALUATION INSTANCES
# =============================================================================
@dataclass(frozen=True)
class Instance:
    """Prefix before t, factual decisions in [t, t+δ) and the outcome at t+δ."""

    prefix: HistoryPrefix
    horizon: float
    plan: InterventionPlan
    target: np.ndarray = field(repr=False)

    @property
    def subject_id(self) -> int:
        return self.prefix.trajectory.id

    @property
    def cutoff(self) -> float:
        return self.prefix.cutoff

    @property
    def instance_id(self) -> str:
        return f"{self.subject_id}:{self.cutoff:g}:{self.horizon:g}"


def factual_plan(traj: TrajectoryLike, start: float, horizon: float) -> InterventionPlan:
    """Factual treatment decisions in [start, horizon) as a plan."""
    arr = as_arrays(traj)
    window = arr.a_mask & (arr.times >= start - EPS) & (arr.times < horizon - EPS)
    return InterventionPlan(
        start=start,
        jump_times=[float(t) for t in arr.times[window]],
        values=[[int(v) for v in row] for row in arr.a[window]] if window.any() else [],
        horizon=horizon,
    )


def slice_instances(traj: Trajectory, horizons: Sequence[float]) -> List[Instance]:
    """
    Enumerate (prefix, factual plan, target) instances.

    One instance per grid time t > times[0] with t + δ <= tau and an observed
    outcome at t + δ.

    Args:
        traj: Source trajectory
        horizons: Prediction horizons δ (days)

    Returns:
        Instances ordered by horizon then cutoff; may be empty
    """
    arr = as_arrays(traj)
    instances: List[Instance] = []
    if len(arr.times) == 0:
        return instances
    for delta in horizons:
        if delta <= 0:
            raise ValidationError("horizon must be positive")
        for t in arr.times:
            if t <= arr.times[0] + EPS or t + delta > arr.tau + EPS:
                continue
            hits = np.flatnonzero(np.abs(arr.times - (t + delta)) < 1e-7)
            if len(hits) == 0 or not arr.y_mask[hits[0]]:
                continue
            instances.append(
                Instance(
                    prefix=HistoryPrefix(trajectory=traj, cutoff=float(t)),
                    horizon=float(delta),
                    plan=factual_plan(arr, float(t), float(t + delta)),
                    target=arr.y[hits[0]].copy(),
                )
            )
    return instances


# =============================================================================
# I/O
# =============================================================================
def load_trajectories(path: PathLike) -> List[Trajectory]:
    """
    Read a JSON-lines trajectory file.

    Raises:
        ValidationError: malformed line or record
    """
    try:
        return [Trajectory.model_validate(record) for record in read_jsonl(path)]
    except (PydanticValidationError, json.JSONDecodeError) as e:
        raise ValidationError(f"malformed trajectory file: {e}", key=str(path))


def save_trajectories(path: PathLike, trajectories: Iterable[Trajectory]) -> None:
    """Write trajectories as JSON-lines (write-then-rename)."""
    write_jsonl(path, trajectories)
