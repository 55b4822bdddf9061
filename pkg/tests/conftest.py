import pytest

from qkdnet.simulation import read_ref
from qkdnet.topology import FeasibilityPolicy, load_topology


@pytest.fixture(scope="session")
def metro_topology():
    return load_topology(read_ref("builtin:jinan.topo", None))


@pytest.fixture(scope="session")
def default_policy():
    return FeasibilityPolicy()
