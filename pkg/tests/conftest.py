import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY = dict(ftll=1, ftal=1, rtll=1, rtal=1, wp_ratios=(0.3, 0.6), fp_ratios=(0.25, 0.5), distill_archs=("S",),
            distill_seeds=2, negatives={"S": 3, "M": 3}, irrelevant=2)


@pytest.fixture(scope="session")
def tiny_ensemble():
    """A small classification ensemble, forged once per session."""
    from metav.forge import Composition
    from metav.pipeline import forge_scenario
    return forge_scenario("classification", 0, Composition(**TINY))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
