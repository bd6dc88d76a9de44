# backend/scipnet/errors.py
"""
Exception hierarchy for SCIP-Net.

Validation errors map to CLI exit code 1, everything else to exit code 2.
"""

from typing import Optional


class ScipNetError(Exception):
    """Base class for all SCIP-Net errors."""

    exit_code: int = 2


# -------------------------------------------------
# VALIDATION (exit 1)
# -------------------------------------------------
class ValidationError(ScipNetError):
    """Bad input data, bad configuration or bad command-line usage."""

    exit_code = 1

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class UsageError(ValidationError):
    """Unknown flag, missing flag or unknown subcommand."""


# -------------------------------------------------
# RUNTIME (exit 2)
# -------------------------------------------------
class EmptyChannelError(ScipNetError):
    """A control path channel has no observed points before the cutoff."""

    def __init__(self, channel: str):
        self.channel = channel
        super().__init__(f"empty channel: {channel}")


class NonpositiveVolumeError(ScipNetError):
    """Tumor update received a volume <= 0."""

    def __init__(self, volume: float):
        self.volume = volume
        super().__init__(f"nonpositive volume: {volume}")


class DivergenceError(ScipNetError):
    """A rollout or a training stage produced non-finite numbers."""

    def __init__(self, message: str, step: Optional[int] = None, epoch: Optional[int] = None):
        self.step = step
        self.epoch = epoch
        where = []
        if step is not None:
            where.append(f"step={step}")
        if epoch is not None:
            where.append(f"epoch={epoch}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"divergence: {message}{suffix}")


class WeightMismatchError(ScipNetError):
    """Unstabilized and scaling traces do not share jump times."""
