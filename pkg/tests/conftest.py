import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from magnet.cpa_net import Activation, CpaNetwork, Layer

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def dense(w, b=None, act=None):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return Layer(w, np.zeros(w.shape[0]) if b is None else b, act or Activation.identity())


def linear_net(A, b=None):
    return CpaNetwork((dense(A, b),))


def leaky_1d(alpha=0.5):
    """1->1 LeakyReLU(alpha) with w=1, b=0, then an identity read-out."""
    return CpaNetwork((dense([[1.0]], act=Activation.leaky_relu(alpha)), dense([[1.0]])))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda l: int(l.split()[0][1:])):
        terminalreporter.write_line(line)
