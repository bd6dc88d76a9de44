# backend/scipnet/networks/__init__.py
"""
The four SCIP-Net networks and their losses.
Each network is a neural CDE with its own input layer, vector field and heads.
"""

from .base import CDENetwork, TreatmentHeads, TreatmentOutput
from .decoder import DecoderNet
from .encoder import EncoderNet
from .losses import bce_intensity, ce_propensity, mse_encoder, weighted_mse_decoder
from .stability import StabilityNet
from .weight import WeightNet

__all__ = [
    "CDENetwork",
    "TreatmentHeads",
    "TreatmentOutput",
    "StabilityNet",
    "WeightNet",
    "EncoderNet",
    "DecoderNet",
    "bce_intensity",
    "ce_propensity",
    "mse_encoder",
    "weighted_mse_decoder",
]
