import sys

import numpy as np
import pytest

from twocats.copulas import ReferenceCopula
from twocats.training import TrainConfig, TrainingData, train


class StubModel:
    """Model-shaped object with hand-set outputs for loss arithmetic checks."""

    def __init__(self, H=None, jets=None, density=None, edge_jets=None):
        self._H, self._jets, self._density, self._edge = H, jets, density, edge_jets

    def H(self, u, v):
        return self._H(np.asarray(u), np.asarray(v))

    def jets(self, u, v):
        return self._jets(np.asarray(u), np.asarray(v))

    def density(self, u, v):
        return self._density(np.asarray(u), np.asarray(v))

    def edge_jets(self, u, v):
        return self._edge(np.asarray(u), np.asarray(v))


@pytest.fixture(scope="session")
def small_gauss9():
    """128 rows of Gaussian rho=0.9 data; one training chunk, so a single compile."""
    raw = ReferenceCopula("gaussian", 0.9).sample(128, 17)
    return TrainingData.from_raw(raw)


@pytest.fixture(scope="session")
def short_run(small_gauss9):
    cfg = TrainConfig(epochs=40, lr=3e-3, seed=5)
    return train(small_gauss9, cfg)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
