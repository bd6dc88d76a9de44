# backend/tests/conftest.py
"""
Shared fixtures: hand-built trajectories, tiny simulated cohorts and
training settings small enough for unit tests.

Desk-scale reproductions are marked `slow` and only run with --runslow.
"""

from typing import List, Optional

import pytest

from backend.scipnet.schemas import SimConfig, TrainConfig, Trajectory
from backend.scipnet.simulator import simulate_cohort


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction test")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# -------------------------------------------------
# HAND-BUILT TRAJECTORIES
# -------------------------------------------------
def daily_trajectory(
    tau: int = 30,
    observed: Optional[List[int]] = None,
    decisions: Optional[List[int]] = None,
    treated: Optional[List[int]] = None,
    subject_id: int = 0,
) -> Trajectory:
    """
    Daily trajectory with y_s = s + 1 on observed days.

    Args:
        tau: Last day
        observed: Days with an observed outcome (default: every day)
        decisions: Days with a treatment decision (default: none)
        treated: Decision days on which both arms fire
        subject_id: Trajectory id
    """
    days = list(range(tau + 1))
    observed = days if observed is None else observed
    decisions = decisions or []
    treated = treated or []
    y, x = [], []
    previous = None
    for s in days:
        if s in observed:
            y.append([float(s + 1)])
            x.append([previous if previous is not None else float(s + 1)])
            previous = float(s + 1)
        else:
            y.append([None])
            x.append([None])
    return Trajectory(
        id=subject_id,
        tau=float(tau),
        times=[float(s) for s in days],
        y=y,
        y_mask=[int(s in observed) for s in days],
        x=x,
        a=[[1, 1] if s in treated else [0, 0] for s in days],
        a_mask=[int(s in decisions) for s in days],
        static=[1.0, 0.0, 0.0],
    )


@pytest.fixture
def full_trajectory() -> Trajectory:
    return daily_trajectory(decisions=[2, 5, 9], treated=[5])


# -------------------------------------------------
# SIMULATED COHORTS
# -------------------------------------------------
@pytest.fixture
def tiny_sim() -> SimConfig:
    return SimConfig(n_subjects=12, tau=10, window=5, seed=3, gamma=4.0)


@pytest.fixture
def tiny_cohort(tiny_sim):
    return simulate_cohort(tiny_sim)


@pytest.fixture
def tiny_train() -> TrainConfig:
    return TrainConfig(epochs=1, hidden_dim=4, latent_factor=1, horizons=[1, 2], seed=5, val_fraction=0.25)
