"""Shared fixtures."""

from __future__ import annotations

import math

import pytest
from hypothesis import settings

from bunching import simulator

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def exp1_sample():
    return simulator.simulate(simulator.experiment_preset("exp1", seed=0))


@pytest.fixture(scope="session")
def b2_exact():
    """Population inputs of the flat-density counterexample."""
    s0, s1 = math.log(0.8), math.log(0.7)
    return {"B": 1.5 * (s0 - s1) * 0.5, "f": 0.5, "s0": s0, "s1": s1, "eps": 1.5}
