# backend/scipnet/networks/stability.py
"""
Stability network S: treatment intensity and propensity given the
treatment history only (treatment channels and N^a).
"""

import torch

from .base import CDENetwork, TreatmentHeads, TreatmentOutput, latent_size


class StabilityNet(CDENetwork):
    """
    Runs once over the causal treatment path of a subject. The head at grid
    point g sees only decisions strictly before g and predicts the decision
    in the bin starting at g.
    """

    def __init__(self, input_channels: int, n_arms: int, latent_factor: int = 2, hidden_dim: int = 32, dropout: float = 0.1, substeps: int = 1):
        super().__init__(
            input_channels=input_channels,
            static_dim=0,
            latent_dim=latent_size(latent_factor, input_channels),
            hidden_dim=hidden_dim,
            dropout=dropout,
            substeps=substeps,
        )
        self.n_arms = n_arms
        self.heads = TreatmentHeads(self.latent_dim, n_arms)

    def forward(self, treatment_controls: torch.Tensor) -> TreatmentOutput:
        """
        Args:
            treatment_controls: Treatment-only paths [B, G, C_a]

        Returns:
            Logits per grid point: event [B, G], arms [B, G, d_a]
        """
        return self.heads(self.rollout(treatment_controls).states)
