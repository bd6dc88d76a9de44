# backend/scipnet/networks/losses.py
"""
Training losses for the four networks.

Masks select the entries that carry a target; an all-false mask gives a zero
loss that is still attached to the graph.
"""

from typing import Tuple

import torch
import torch.nn.functional as F


def _zero(like: torch.Tensor) -> torch.Tensor:
    return like.sum() * 0.0


def bce_intensity(event_logit: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy of the per-bin decision indicator dN^a."""
    mask = mask.bool()
    if not bool(mask.any()):
        return _zero(event_logit)
    return F.binary_cross_entropy_with_logits(event_logit[mask], target[mask].to(event_logit.dtype))


def ce_propensity(arm_logit: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """
    Cross-entropy of the treatment vector at decision bins.

    Arms are independent Bernoulli variables, so the multi-arm cross-entropy
    is the per-arm binary cross-entropy summed over arms.
    """
    mask = mask.bool()
    if not bool(mask.any()):
        return _zero(arm_logit)
    per_arm = F.binary_cross_entropy_with_logits(arm_logit[mask], target[mask].to(arm_logit.dtype), reduction="none")
    return per_arm.sum(dim=-1).mean()


def mse_encoder(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Squared error summed over outcome dims, averaged over observed rows."""
    mask = mask.bool()
    if not bool(mask.any()):
        return _zero(pred)
    return ((pred[mask] - target[mask]) ** 2).sum(dim=-1).mean()


def weighted_mse_decoder(pred: torch.Tensor, target: torch.Tensor, weight: torch.Tensor) -> Tuple[torch.Tensor, int]:
    """
    Mean over rows of w_i * ||y_hat_i - y_i||^2.

    Rows with a non-finite weight are skipped.

    Returns:
        (loss, number of skipped rows)
    """
    finite = torch.isfinite(weight)
    skipped = int((~finite).sum())
    if not bool(finite.any()):
        return _zero(pred), skipped
    squared = ((pred[finite] - target[finite]) ** 2).sum(dim=-1)
    return (weight[finite].to(pred.dtype) * squared).mean(), skipped
