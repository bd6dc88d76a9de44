# backend/scipnet/networks/decoder.py
"""
Decoder D: rolls the encoder representation forward along a treatment plan
and reads out the outcome at the horizon.
"""

import torch
from torch import nn

from ..errors import ValidationError
from ..neuralcde import DTYPE, VectorField, euler_rollout, init_linear
from .base import latent_size


class DecoderNet(nn.Module):
    """
    z^D_t = nu^D(z^E_t), then dz^D = f^D(z^D, s) dA on the treatment-side path
    over [t, t + delta]. The head sees z^D at the horizon and the treatment
    the plan holds there.
    """

    def __init__(self, encoder_dim: int, input_channels: int, n_arms: int, outcome_dim: int = 1, latent_factor: int = 2, hidden_dim: int = 32, dropout: float = 0.1, substeps: int = 1):
        super().__init__()
        self.input_channels = input_channels
        self.n_arms = n_arms
        self.substeps = substeps
        self.latent_dim = latent_size(latent_factor, input_channels)
        self.input_layer = init_linear(nn.Linear(encoder_dim, self.latent_dim, dtype=DTYPE))
        self.field = VectorField(self.latent_dim, input_channels, hidden_dim, dropout)
        self.head = init_linear(nn.Linear(self.latent_dim + n_arms, outcome_dim, dtype=DTYPE))

    def forward(
        self,
        encoder_latent: torch.Tensor,
        plan_controls: torch.Tensor,
        start: torch.Tensor,
        end: torch.Tensor,
    ) -> torch.Tensor:
        """
        Args:
            encoder_latent: z^E at each row's cutoff [R, d_zE]
            plan_controls: Treatment-side plan paths [R, G, C_a]
            start: Cutoff grid index t [R]
            end: Horizon grid index t + delta [R]

        Returns:
            Outcome predictions at the horizon [R, d_y]

        Raises:
            ValidationError: a row with end <= start
        """
        if bool((end <= start).any()):
            raise ValidationError("horizon must be positive")
        z0 = self.input_layer(encoder_latent)
        state = euler_rollout(self.field, z0, plan_controls, 0, int(end.max()), self.substeps, row_start=start, times=plan_controls[:, :, 0])
        z_end = state.at(end)
        rows = torch.arange(plan_controls.shape[0])
        held = plan_controls[rows, end.long(), 1:1 + self.n_arms]
        return self.head(torch.cat([z_end, held], dim=-1))
