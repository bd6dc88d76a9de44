# backend/scipnet/__init__.py
"""
SCIP-Net: stabilized continuous-time inverse propensity networks for
conditional average potential outcomes under hard interventions.
"""

from .config import ARTIFACT_VERSION

__version__ = ARTIFACT_VERSION
