# backend/scipnet/neuralcde.py
"""
Neural controlled differential equation core.

    z_s = z_0 + int_0^s f_theta(z_u, u) dX_u

solved with the explicit Euler scheme on a uniform grid. X is piecewise
linear between grid points, so each grid interval is split into `substeps`
equal increments. Everything runs in float64 and gradients come from torch
reverse mode through the unrolled solver.
"""

import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .errors import DivergenceError, ValidationError

DTYPE = torch.float64


def as_tensor(values) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)


# =============================================================================
# VECTOR FIELD
# =============================================================================
class VectorField(nn.Module):
    """
    f_theta: R^{d_z} x R -> R^{d_z x C}.

    The latent state and the current time enter the hidden layer together.
    Single hidden layer with tanh, dropout on the hidden layer and a final
    tanh so the field stays bounded.
    """

    def __init__(self, latent_dim: int, input_channels: int, hidden_dim: int = 32, dropout: float = 0.1):
        super().__init__()
        self.latent_dim = latent_dim
        self.input_channels = input_channels
        self.linear1 = nn.Linear(latent_dim + 1, hidden_dim, dtype=DTYPE)
        self.dropout = nn.Dropout(dropout)
        self.linear2 = nn.Linear(hidden_dim, latent_dim * input_channels, dtype=DTYPE)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for layer in (self.linear1, self.linear2):
            bound = layer.in_features ** -0.5
            nn.init.uniform_(layer.weight, -bound, bound)
            nn.init.uniform_(layer.bias, -bound, bound)
        # small initial field keeps early rollouts near z_0
        with torch.no_grad():
            self.linear2.weight.mul_(0.1)
            self.linear2.bias.mul_(0.1)

    def forward(self, z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        """z [B, d_z] and t [B] (or a scalar) -> [B, d_z, C]."""
        t = torch.as_tensor(t, dtype=DTYPE).expand(z.shape[:-1]).unsqueeze(-1)
        h = torch.tanh(self.linear1(torch.cat([z, t], dim=-1)))
        h = self.dropout(h)
        out = torch.tanh(self.linear2(h))
        return out.view(*z.shape[:-1], self.latent_dim, self.input_channels)


def init_linear(layer: nn.Linear) -> nn.Linear:
    """Uniform +-fan_in^{-1/2} initialization for heads and input layers."""
    bound = layer.in_features ** -0.5
    nn.init.uniform_(layer.weight, -bound, bound)
    nn.init.uniform_(layer.bias, -bound, bound)
    return layer


# =============================================================================
# EULER ROLLOUT
# =============================================================================
@dataclass
class CDEState:
    """Latent states at grid indices start..end (inclusive)."""

    start: int
    states: torch.Tensor  # [B, end - start + 1, d_z]

    @property
    def final(self) -> torch.Tensor:
        return self.states[:, -1]

    def at(self, index: torch.Tensor) -> torch.Tensor:
        """Per-row latent at absolute grid index `index` [B]."""
        rel = (index - self.start).long()
        gather = rel.view(-1, 1, 1).expand(-1, 1, self.states.shape[-1])
        return self.states.gather(1, gather).squeeze(1)


def euler_rollout(
    field: VectorField,
    z0: torch.Tensor,
    controls: torch.Tensor,
    start: int = 0,
    end: Optional[int] = None,
    substeps: int = 1,
    row_start: Optional[torch.Tensor] = None,
    times: Optional[torch.Tensor] = None,
) -> CDEState:
    """
    Explicit Euler solution of dz = f(z, t) dX between two grid indices.

    Args:
        field: Vector field f_theta
        z0: Latent state at grid index `start` [B, d_z]
        controls: Control path values on the grid [B, G, C]
        start: First grid index
        end: Last grid index (defaults to G - 1)
        substeps: Euler steps per grid interval
        row_start: Optional per-row first grid index [B]; a row's latent
            stays at z0 until its own start
        times: Optional per-row time of every grid point [B, G]; defaults
            to the grid position scaled to [0, 1]. Substeps interpolate
            linearly between grid times

    Returns:
        CDEState holding every intermediate grid state

    Raises:
        DivergenceError: non-finite latent state, with the grid step index
    """
    if controls.dim() != 3:
        raise ValidationError(f"controls must be [B, G, C], got {tuple(controls.shape)}")
    end = controls.shape[1] - 1 if end is None else end
    if not 0 <= start <= end < controls.shape[1]:
        raise ValidationError(f"rollout range [{start}, {end}] outside grid of {controls.shape[1]}")

    if times is None:
        grid = torch.arange(controls.shape[1], dtype=DTYPE) / max(controls.shape[1] - 1, 1)
        times = grid.expand(controls.shape[0], -1)
    elif times.shape != controls.shape[:2]:
        raise ValidationError(f"times must be [B, G] = {tuple(controls.shape[:2])}, got {tuple(times.shape)}")

    z = z0
    states: List[torch.Tensor] = [z]
    for k in range(start, end):
        dx = (controls[:, k + 1] - controls[:, k]) / substeps
        dt = (times[:, k + 1] - times[:, k]) / substeps
        if row_start is not None:
            dx = dx * (row_start <= k).to(DTYPE).unsqueeze(-1)
        for j in range(substeps):
            z = z + torch.einsum("bzc,bc->bz", field(z, times[:, k] + j * dt), dx)
        if not torch.isfinite(z).all():
            raise DivergenceError("non-finite latent state", step=k + 1)
        states.append(z)
    return CDEState(start=start, states=torch.stack(states, dim=1))


# =============================================================================
# GRADIENTS AND OPTIMIZATION
# =============================================================================
def parameter_gradients(loss: torch.Tensor, params: Sequence[torch.Tensor]) -> List[torch.Tensor]:
    """d loss / d params; unused parameters get zero gradients."""
    grads = torch.autograd.grad(loss, list(params), allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def make_optimizer(params: Iterable[torch.Tensor], lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(list(params), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def adam_update(
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor],
    optimizer: torch.optim.Optimizer,
    clip_norm: float,
) -> float:
    """
    Clip gradients to a global norm, then take one Adam step.

    Returns:
        Global gradient norm before clipping
    """
    for p, g in zip(params, grads):
        p.grad = g.detach().clone()
    norm = torch.nn.utils.clip_grad_norm_(list(params), clip_norm)
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
    return float(norm)


# =============================================================================
# PARAMETER PERSISTENCE
# =============================================================================
def pack_arrays(arrays: Dict[str, np.ndarray]) -> Tuple[List[Dict[str, object]], bytes]:
    """
    Concatenate named float64 arrays into one little-endian blob.

    Returns:
        (manifest entries {name, shape, offset, dtype}, blob)
    """
    manifest: List[Dict[str, object]] = []
    parts: List[bytes] = []
    offset = 0
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype="<f8").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arrays[name])), "offset": offset, "dtype": "<f8"})
        parts.append(data)
        offset += len(data)
    return manifest, b"".join(parts)


def unpack_arrays(manifest: Sequence[Dict[str, object]], blob: bytes) -> Dict[str, np.ndarray]:
    """Inverse of pack_arrays."""
    arrays: Dict[str, np.ndarray] = {}
    for entry in manifest:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        raw = blob[start:start + 8 * count]
        if len(raw) != 8 * count:
            raise ValidationError(f"parameter blob truncated at {entry['name']}")
        arrays[str(entry["name"])] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return arrays


def manifest_json(manifest: Sequence[Dict[str, object]]) -> str:
    return json.dumps(list(manifest), sort_keys=True)


def module_arrays(module: nn.Module, prefix: str = "") -> Dict[str, np.ndarray]:
    """Named parameter arrays of a module."""
    return {f"{prefix}{name}": p.detach().cpu().numpy().astype(np.float64) for name, p in module.state_dict().items()}


def load_module_arrays(module: nn.Module, arrays: Dict[str, np.ndarray], prefix: str = "") -> None:
    """Load arrays saved by module_arrays back into a module."""
    state = {}
    for name in module.state_dict():
        key = f"{prefix}{name}"
        if key not in arrays:
            raise ValidationError(f"missing parameter {key}")
        state[name] = torch.from_numpy(arrays[key]).to(DTYPE)
    module.load_state_dict(state)
