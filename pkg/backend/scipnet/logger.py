# backend/scipnet/logger.py
"""
Centralized logging configuration for SCIP-Net.
Provides colored, structured console logging for simulation, training,
weighting and evaluation runs.
"""

import logging
import sys
from datetime import datetime
from typing import Optional

from .config import settings


# ANSI color codes for terminal output
class Colors:
    RESET = "\033[0m"
    BOLD = "\033[1m"

    RED = "\033[31m"
    GREEN = "\033[32m"
    YELLOW = "\033[33m"
    MAGENTA = "\033[35m"
    CYAN = "\033[36m"
    WHITE = "\033[37m"

    BRIGHT_RED = "\033[91m"
    BRIGHT_GREEN = "\033[92m"
    BRIGHT_YELLOW = "\033[93m"
    BRIGHT_BLUE = "\033[94m"
    BRIGHT_MAGENTA = "\033[95m"
    BRIGHT_CYAN = "\033[96m"


class _Plain:
    """Drop-in for Colors when SCIPNET_NO_COLOR is set."""

    def __getattr__(self, name: str) -> str:
        return ""


C = _Plain() if settings.NO_COLOR else Colors


class ScipFormatter(logging.Formatter):
    """Formatter with a timestamp and a colored level column."""

    LEVEL_COLORS = {
        logging.DEBUG: Colors.CYAN,
        logging.INFO: Colors.GREEN,
        logging.WARNING: Colors.YELLOW,
        logging.ERROR: Colors.RED,
        logging.CRITICAL: Colors.BRIGHT_RED + Colors.BOLD,
    }

    def format(self, record: logging.LogRecord) -> str:
        color = "" if settings.NO_COLOR else self.LEVEL_COLORS.get(record.levelno, Colors.WHITE)
        reset = "" if settings.NO_COLOR else Colors.RESET
        timestamp = datetime.now().strftime("%H:%M:%S")
        level_name = record.levelname.ljust(8)
        return (
            f"{C.BRIGHT_BLUE}[{timestamp}]{C.RESET} "
            f"{color}{level_name}{reset} "
            f"{record.getMessage()}"
        )


class ScipLogger:
    """
    Centralized logger for SCIP-Net with domain-specific logging methods.
    Writes to stderr so stdout stays free for command output.
    """

    def __init__(self, name: str = "scipnet"):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, settings.LOG_LEVEL, logging.INFO))
        self.logger.handlers.clear()

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(ScipFormatter())
        self.logger.addHandler(console_handler)
        self.logger.propagate = False

    # ===========================================
    # GENERAL LOGGING
    # ===========================================

    def debug(self, message: str) -> None:
        self.logger.debug(message)

    def info(self, message: str) -> None:
        self.logger.info(message)

    def warning(self, message: str) -> None:
        self.logger.warning(message)

    def error(self, message: str) -> None:
        self.logger.error(message)

    # ===========================================
    # SPECIALIZED LOGGING METHODS
    # ===========================================

    def simulation_summary(self, n_subjects: int, gamma: float, treat_rate: float, obs_rate: float) -> None:
        """
        Log the headline numbers of a simulated cohort.

        Args:
            n_subjects: Number of simulated trajectories
            gamma: Confounding strength used
            treat_rate: Fraction of (subject, day, arm) cells that were treated
            obs_rate: Fraction of days with an observed outcome
        """
        self.logger.info(
            f"{C.BRIGHT_MAGENTA}SIMULATED{C.RESET} "
            f"subjects={C.CYAN}{n_subjects}{C.RESET} "
            f"| gamma={gamma:g} "
            f"| treated={treat_rate:.3f} "
            f"| observed={obs_rate:.3f}"
        )

    def stage_start(self, stage: str, n_train: int, n_val: int) -> None:
        """
        Log the start of a training stage.

        Args:
            stage: Stage name ("stability", "weight", "encoder", "decoder[h=2]")
            n_train: Training rows in the stage
            n_val: Validation rows in the stage
        """
        self.logger.info(
            f"{C.BRIGHT_CYAN}STAGE{C.RESET} "
            f"{C.BOLD}{stage}{C.RESET} "
            f"| train={n_train} | val={n_val}"
        )

    def epoch_metrics(self, stage: str, epoch: int, train_loss: float, val_loss: Optional[float]) -> None:
        """Log one epoch of a training stage at DEBUG level."""
        val = f"{val_loss:.6f}" if val_loss is not None else "n/a"
        self.logger.debug(
            f"{C.CYAN}EPOCH{C.RESET} {stage} #{epoch} "
            f"train={train_loss:.6f} val={val}"
        )

    def stage_done(self, stage: str, train_loss: Optional[float], val_loss: Optional[float]) -> None:
        """Log the final losses of a stage."""
        fmt = lambda v: f"{v:.6f}" if v is not None else "n/a"
        self.logger.info(
            f"{C.BRIGHT_GREEN}STAGE DONE{C.RESET} {stage} "
            f"| train={fmt(train_loss)} | val={fmt(val_loss)}"
        )

    def weight_summary(self, variant: str, horizon: int, n: int, mean: float, maximum: float, floor_rate: float) -> None:
        """
        Log cached weight statistics; warns when floors fire too often.

        Args:
            variant: scip, cip or unweighted
            horizon: Decoder horizon in days
            n: Instances in the cache
            mean: Mean raw weight before truncation
            maximum: Maximum raw weight before truncation
            floor_rate: Fraction of instances with a floor activation
        """
        message = (
            f"{C.BRIGHT_YELLOW}WEIGHTS{C.RESET} "
            f"variant={C.CYAN}{variant}{C.RESET} h={horizon} "
            f"| n={n} | mean={mean:.4g} | max={maximum:.4g} "
            f"| floor_rate={floor_rate:.3f}"
        )
        if floor_rate > 0.2:
            self.logger.warning(message + f" {C.YELLOW}(floor activations above 20%){C.RESET}")
        else:
            self.logger.info(message)

    def artifact_written(self, path: str, digest: str) -> None:
        """Log an artifact written to disk with its sha256 digest."""
        self.logger.info(
            f"{C.BRIGHT_GREEN}WROTE{C.RESET} {path} "
            f"{C.WHITE}sha256={digest[:16]}{C.RESET}"
        )

    def cell_result(self, cell: str, success: bool, rmse: Optional[float] = None, error: Optional[str] = None) -> None:
        """
        Log a sweep cell outcome.

        Args:
            cell: Cell label (variant/gamma/horizon/seed)
            success: Whether the cell completed
            rmse: RMSE if completed
            error: Error message if failed
        """
        if success:
            self.logger.info(
                f"{C.BRIGHT_GREEN}CELL OK{C.RESET} [{cell}] rmse={rmse:.4f}"
            )
        else:
            self.logger.warning(
                f"{C.BRIGHT_RED}CELL FAILED{C.RESET} [{cell}] error={error}"
            )

    def separator(self, title: str = "") -> None:
        """
        Print a visual separator for readability in logs.

        Args:
            title: Optional title to display in the separator
        """
        if title:
            self.logger.info(f"{C.BRIGHT_BLUE}{'─' * 20} {title} {'─' * 20}{C.RESET}")
        else:
            self.logger.info(f"{C.BRIGHT_BLUE}{'─' * 50}{C.RESET}")


# Global logger instance
logger = ScipLogger()


def get_logger() -> ScipLogger:
    return logger
