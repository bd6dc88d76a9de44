# backend/scipnet/networks/base.py
"""
Shared building blocks for the four SCIP-Net networks.
"""

from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from ..neuralcde import DTYPE, CDEState, VectorField, euler_rollout, init_linear


class CDENetwork(nn.Module):
    """
    Input layer nu plus a neural CDE vector field.

    z_0 = nu([X_0, static]); the latent then follows the control path.
    """

    def __init__(
        self,
        input_channels: int,
        static_dim: int,
        latent_dim: int,
        hidden_dim: int = 32,
        dropout: float = 0.1,
        substeps: int = 1,
    ):
        super().__init__()
        self.input_channels = input_channels
        self.static_dim = static_dim
        self.latent_dim = latent_dim
        self.substeps = substeps
        self.input_layer = init_linear(nn.Linear(input_channels + static_dim, latent_dim, dtype=DTYPE))
        self.field = VectorField(latent_dim, input_channels, hidden_dim, dropout)

    def initial_state(self, controls: torch.Tensor, static: Optional[torch.Tensor] = None) -> torch.Tensor:
        x0 = controls[:, 0]
        if self.static_dim:
            x0 = torch.cat([x0, static], dim=-1)
        return self.input_layer(x0)

    def rollout(
        self,
        controls: torch.Tensor,
        static: Optional[torch.Tensor] = None,
        end: Optional[int] = None,
    ) -> CDEState:
        """Latent states from grid index 0 to `end` (default: last)."""
        return euler_rollout(
            self.field, self.initial_state(controls, static), controls, 0, end, self.substeps, times=controls[:, :, 0],
        )


@dataclass
class TreatmentOutput:
    """Logits of the intensity head (per-bin decision) and the per-arm propensity head."""

    event_logit: torch.Tensor
    arm_logit: torch.Tensor

    @property
    def event_prob(self) -> torch.Tensor:
        return torch.sigmoid(self.event_logit)

    @property
    def arm_prob(self) -> torch.Tensor:
        return torch.sigmoid(self.arm_logit)


class TreatmentHeads(nn.Module):
    """mu^I (decision in the next bin) and mu^P (independent per-arm Bernoulli)."""

    def __init__(self, latent_dim: int, n_arms: int):
        super().__init__()
        self.intensity = init_linear(nn.Linear(latent_dim, 1, dtype=DTYPE))
        self.propensity = init_linear(nn.Linear(latent_dim, n_arms, dtype=DTYPE))

    def forward(self, z: torch.Tensor) -> TreatmentOutput:
        return TreatmentOutput(event_logit=self.intensity(z).squeeze(-1), arm_logit=self.propensity(z))


def latent_size(factor: int, input_channels: int) -> int:
    return factor * input_channels
