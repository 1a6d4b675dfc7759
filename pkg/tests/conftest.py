import numpy as np
import pytest

from covtpp.data import EventSequence
from covtpp.encoder import HyperParams

# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def random_sequence(rng, L=5, F=3, K=2):
    return EventSequence(
        np.cumsum(rng.exponential(size=L)) + 0.1,
        rng.integers(0, K, L),
        rng.normal(size=(L, F)),
    )


def perturb(store, rng, scale=0.3):
    """Move every parameter off its special initial value (zeros, ones)."""
    store.load_numpy({k: v + rng.normal(scale=scale, size=v.shape) for k, v in store.numpy().items()})


@pytest.fixture
def tiny_hp():
    return HyperParams(K=2, F=3, M=8, M_K=8, M_V=4, H=2, H_fi=2, C=2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
