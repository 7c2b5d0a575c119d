import pytest

from ftnoc.network import Network

_run = Network.run


@pytest.fixture(autouse=True)
def ledger_checked_every_cycle(monkeypatch):
    """Every simulation in the test suite asserts flit conservation each cycle."""
    def run(self, max_cycles=None, check_ledger=True):
        return _run(self, max_cycles, check_ledger=True)
    monkeypatch.setattr(Network, "run", run)
