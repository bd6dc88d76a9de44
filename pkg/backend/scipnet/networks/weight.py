# backend/scipnet/networks/weight.py
"""
Weight network W: treatment intensity and propensity given the full history.
"""

import torch

from .base import CDENetwork, TreatmentHeads, TreatmentOutput, latent_size


class WeightNet(CDENetwork):
    """
    Each row is the prefix path of one (subject, cutoff g) pair; the latent
    at g feeds the heads, which predict the decision in the bin starting at g.
    """

    def __init__(self, input_channels: int, static_dim: int, n_arms: int, latent_factor: int = 2, hidden_dim: int = 32, dropout: float = 0.1, substeps: int = 1):
        super().__init__(
            input_channels=input_channels,
            static_dim=static_dim,
            latent_dim=latent_size(latent_factor, input_channels),
            hidden_dim=hidden_dim,
            dropout=dropout,
            substeps=substeps,
        )
        self.n_arms = n_arms
        self.heads = TreatmentHeads(self.latent_dim, n_arms)

    def forward(self, prefix_controls: torch.Tensor, static: torch.Tensor, cutoff: torch.Tensor) -> TreatmentOutput:
        """
        Args:
            prefix_controls: Full-history prefix paths [R, G, C]
            static: Static covariates [R, S]
            cutoff: Grid index of each row's cutoff [R]

        Returns:
            Logits per row: event [R], arms [R, d_a]
        """
        state = self.rollout(prefix_controls, static, end=int(cutoff.max()))
        return self.heads(state.at(cutoff))
