"""Shared test fixtures and helpers."""

from __future__ import annotations

import numpy as np
import pytest

from emas.core import Agent, EmasParams, Solution
from emas.operators import Objective


def linear_objective(dimension: int = 1) -> Objective:
    """Objective equal to the first coordinate: lets tests pin exact
    objective values by constructing vectors directly."""
    return Objective("first-coordinate", dimension, -100.0, 100.0,
                     lambda x: float(x[0]),
                     lambda xs: xs[:, 0].astype(float))


def agent_with(objective_value: float, energy: int, agent_id: int,
               dimension: int = 1) -> Agent:
    vec = np.zeros(dimension)
    vec[0] = objective_value
    return Agent(agent_id, Solution(vec, -objective_value), energy)


@pytest.fixture
def table_params() -> EmasParams:
    """The benchmark parameter set used across the suite."""
    return EmasParams()


@pytest.fixture
def small_params() -> EmasParams:
    """A small, fast configuration for unit-level engine runs."""
    return EmasParams(initial_size=12, initial_energy=6,
                      reproduction_threshold=8, reproduction_transfer=4,
                      fight_transfer=6, problem_size=4,
                      migration_probability=0.01)
