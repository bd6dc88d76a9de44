# backend/scipnet/datasets.py
"""
Tensorization of trajectories for training and inference.

Every subject gets its causal treatment path (stability network, decoder)
and one full-history prefix path per grid cutoff (weight network, encoder).
"""

from dataclasses import dataclass, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import EmptyChannelError, ValidationError
from .neuralcde import as_tensor
from .schemas import InterventionPlan, Trajectory
from .trajectory import (
    OutcomeScaler,
    TrajectoryArrays,
    build_control_path,
    channel_names,
    grid_index,
    make_grid,
    slice_instances,
)

STEP = 1.0  # path grid step in days


@dataclass
class PathTensors:
    """Per-subject tensors on the common grid (N subjects, G grid points)."""

    subject_ids: np.ndarray
    grid: np.ndarray
    static: torch.Tensor  # [N, S]
    treatment_controls: torch.Tensor  # [N, G, C_a]
    prefix_controls: torch.Tensor  # [N, G, G, C], second axis = cutoff index
    prefix_valid: torch.Tensor  # [N, G]
    event_target: torch.Tensor  # [N, G], decision in the bin starting at g
    event_mask: torch.Tensor  # [N, G], bins inside [0, tau)
    arm_target: torch.Tensor  # [N, G, d_a]
    current_treatment: torch.Tensor  # [N, G, d_a], treatment held just before g
    outcome_target: torch.Tensor  # [N, G, d_y], scaled
    outcome_mask: torch.Tensor  # [N, G]

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    @property
    def n_arms(self) -> int:
        return self.arm_target.shape[-1]

    @property
    def static_dim(self) -> int:
        return self.static.shape[-1]

    @property
    def full_channels(self) -> int:
        return self.prefix_controls.shape[-1]

    @property
    def treatment_channels(self) -> int:
        return self.treatment_controls.shape[-1]

    def subset(self, index: Sequence[int]) -> "PathTensors":
        index = np.asarray(index, dtype=int)
        picked = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "grid":
                picked[f.name] = value
            elif isinstance(value, torch.Tensor):
                picked[f.name] = value[torch.as_tensor(index, dtype=torch.long)]
            else:
                picked[f.name] = value[index]
        return PathTensors(**picked)

    def pairs(self, mask: torch.Tensor, subjects: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
        """(subject index, cutoff index) of every true entry of a [N, G] mask, optionally restricted to `subjects`."""
        mask = mask.clone()
        if subjects is not None:
            keep = torch.zeros(mask.shape[0], dtype=torch.bool)
            keep[torch.as_tensor(np.asarray(subjects, dtype=int), dtype=torch.long)] = True
            mask &= keep.unsqueeze(1)
        subject, cutoff = torch.nonzero(mask, as_tuple=True)
        return subject.numpy(), cutoff.numpy()

    def prefix_rows(self, subject: np.ndarray, cutoff: np.ndarray) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Prefix controls, static covariates and cutoff indices for (subject, cutoff) rows."""
        s = torch.as_tensor(subject, dtype=torch.long)
        c = torch.as_tensor(cutoff, dtype=torch.long)
        return self.prefix_controls[s, c], self.static[s], c


def _check_cohort(arrays: Sequence[TrajectoryArrays]) -> None:
    if not arrays:
        raise ValidationError("dataset is empty")
    first = arrays[0]
    for arr in arrays[1:]:
        if arr.tau != first.tau or arr.d_a != first.d_a or arr.y.shape[1] != first.y.shape[1] or arr.static.shape != first.static.shape:
            raise ValidationError(f"trajectory {arr.id} differs from trajectory {first.id} in tau or dimensions")


def build_path_tensors(trajectories: Sequence[Trajectory], scaler: OutcomeScaler, step: float = STEP) -> PathTensors:
    """
    Tensorize a cohort.

    Cutoffs without an observed outcome before them are marked invalid in
    `prefix_valid` and their prefix paths left at zero.

    Args:
        trajectories: Cohort sharing tau and dimensions
        scaler: Outcome scaler (fitted on training data)
        step: Grid step in days

    Returns:
        PathTensors for the cohort
    """
    arrays = [TrajectoryArrays.from_trajectory(t) for t in trajectories]
    _check_cohort(arrays)
    tau = arrays[0].tau
    grid = make_grid(tau, step)
    n, g = len(arrays), len(grid)
    d_a, d_y, d_x = arrays[0].d_a, arrays[0].y.shape[1], arrays[0].x.shape[1] if arrays[0].x.size else 0
    c_full = len(channel_names(d_y, d_x, d_a))

    treatment = np.zeros((n, g, len(channel_names(0, 0, d_a, treatment_only=True))))
    prefix = np.zeros((n, g, g, c_full))
    valid = np.zeros((n, g), dtype=bool)
    event = np.zeros((n, g))
    arms = np.zeros((n, g, d_a))
    outcome = np.zeros((n, g, d_y))
    observed = np.zeros((n, g), dtype=bool)

    for i, arr in enumerate(arrays):
        path = build_control_path(arr, tau, step, treatment_only=True)
        treatment[i] = path.values
        for k in range(g):
            try:
                prefix[i, k] = build_control_path(arr, grid[k], step, scaler=scaler).values
                valid[i, k] = True
            except EmptyChannelError:
                continue
        for t, decided, a in zip(arr.times, arr.a_mask, arr.a):
            if decided:
                k = int(np.floor(t / step + 1e-9))
                if k < g - 1:
                    event[i, k] = 1.0
                    arms[i, k] = a
        for t, seen, y in zip(arr.times, arr.y_mask, arr.y):
            if seen and np.all(np.isfinite(y)):
                k = grid_index(grid, t)
                outcome[i, k] = scaler.transform(y)
                observed[i, k] = True

    event_mask = np.zeros((n, g), dtype=bool)
    event_mask[:, :-1] = True
    held = treatment[:, :, 1:1 + d_a]
    return PathTensors(
        subject_ids=np.array([a.id for a in arrays]),
        grid=grid,
        static=as_tensor(np.stack([a.static for a in arrays])),
        treatment_controls=as_tensor(treatment),
        prefix_controls=as_tensor(prefix),
        prefix_valid=torch.as_tensor(valid),
        event_target=as_tensor(event),
        event_mask=torch.as_tensor(event_mask),
        arm_target=as_tensor(arms),
        current_treatment=as_tensor(held),
        outcome_target=as_tensor(outcome),
        outcome_mask=torch.as_tensor(observed & valid),
    )


# =============================================================================
# DECODER INSTANCES
# =============================================================================
@dataclass
class DecoderInstances:
    """Factual (prefix, plan, target) instances for one horizon."""

    horizon: int
    instance_ids: List[str]
    subject_index: np.ndarray  # row into PathTensors
    start: np.ndarray  # cutoff grid index
    end: np.ndarray  # horizon grid index
    target: torch.Tensor  # [M, d_y], scaled
    plans: List[InterventionPlan]

    def __len__(self) -> int:
        return len(self.instance_ids)

    def subset(self, index: Sequence[int]) -> "DecoderInstances":
        index = np.asarray(index, dtype=int)
        return DecoderInstances(
            horizon=self.horizon,
            instance_ids=[self.instance_ids[i] for i in index],
            subject_index=self.subject_index[index],
            start=self.start[index],
            end=self.end[index],
            target=self.target[torch.as_tensor(index, dtype=torch.long)],
            plans=[self.plans[i] for i in index],
        )


def build_decoder_instances(
    trajectories: Sequence[Trajectory],
    tensors: PathTensors,
    horizon: int,
    scaler: OutcomeScaler,
) -> DecoderInstances:
    """Slice every trajectory into horizon-`horizon` instances with a valid prefix."""
    row_of = {int(sid): i for i, sid in enumerate(tensors.subject_ids)}
    ids: List[str] = []
    subject, start, end, target, plans = [], [], [], [], []
    for traj in trajectories:
        row = row_of[traj.id]
        for inst in slice_instances(traj, [horizon]):
            k = grid_index(tensors.grid, inst.cutoff)
            if not bool(tensors.prefix_valid[row, k]):
                continue
            ids.append(inst.instance_id)
            subject.append(row)
            start.append(k)
            end.append(grid_index(tensors.grid, inst.cutoff + inst.horizon))
            target.append(scaler.transform(inst.target))
            plans.append(inst.plan)
    d_y = tensors.outcome_target.shape[-1]
    return DecoderInstances(
        horizon=horizon,
        instance_ids=ids,
        subject_index=np.asarray(subject, dtype=int),
        start=np.asarray(start, dtype=int),
        end=np.asarray(end, dtype=int),
        target=as_tensor(np.asarray(target).reshape(len(ids), d_y)),
        plans=plans,
    )


def to_index(values: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values, dtype=np.int64))
