import numpy as np
import pytest

from rancast.config import load_config
from rancast.handover import gu14_reference_matrix
from rancast.synth import generate_region


@pytest.fixture(scope="session")
def default_config():
    return load_config(None)


@pytest.fixture(scope="session")
def default_region(default_config):
    """The default 4-cell, 52-week scenario shared across test modules."""
    scenario = default_config.scenario()
    ho = gu14_reference_matrix().restricted_to(scenario.cells)
    return generate_region(scenario, ho), ho


@pytest.fixture(scope="session")
def gu14_dataset(default_region, default_config):
    region, _ = default_region
    from rancast.dataset import CellId

    return region[CellId.parse(default_config.target_cell)]
