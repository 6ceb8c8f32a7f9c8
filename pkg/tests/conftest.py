import pytest

from akalab.netlab import Lab


@pytest.fixture
def lab():
    return Lab.provision(["alice", "bob"], seed=7)
