# backend/scipnet/networks/encoder.py
"""
Encoder E: latent representation of the history before a cutoff, trained to
predict the outcome observed at the cutoff.
"""

from typing import Tuple

import torch
from torch import nn

from ..neuralcde import DTYPE, init_linear
from .base import CDENetwork, latent_size


class EncoderNet(CDENetwork):
    """Outcome head mu^E(z_t, a_t) with a_t the treatment held just before t."""

    def __init__(self, input_channels: int, static_dim: int, n_arms: int, outcome_dim: int = 1, latent_factor: int = 2, hidden_dim: int = 32, dropout: float = 0.1, substeps: int = 1):
        super().__init__(
            input_channels=input_channels,
            static_dim=static_dim,
            latent_dim=latent_size(latent_factor, input_channels),
            hidden_dim=hidden_dim,
            dropout=dropout,
            substeps=substeps,
        )
        self.n_arms = n_arms
        self.outcome_dim = outcome_dim
        self.head = init_linear(nn.Linear(self.latent_dim + n_arms, outcome_dim, dtype=DTYPE))

    def latent(self, prefix_controls: torch.Tensor, static: torch.Tensor, cutoff: torch.Tensor) -> torch.Tensor:
        """Latent z^E at each row's cutoff [R, d_z]."""
        return self.rollout(prefix_controls, static, end=int(cutoff.max())).at(cutoff)

    def forward(
        self,
        prefix_controls: torch.Tensor,
        static: torch.Tensor,
        cutoff: torch.Tensor,
        treatment: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            prefix_controls: Prefix paths [R, G, C]
            static: Static covariates [R, S]
            cutoff: Cutoff grid indices [R]
            treatment: Treatment held at the cutoff [R, d_a]

        Returns:
            (outcome predictions [R, d_y], latents [R, d_z])
        """
        z = self.latent(prefix_controls, static, cutoff)
        return self.head(torch.cat([z, treatment], dim=-1)), z
