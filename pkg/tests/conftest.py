import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_synth():
    from moodbench.synth import CountryConfig, SynthConfig, generate

    cfg = SynthConfig(countries=[CountryConfig(c, 6, 12) for c in ("IT", "DK", "MN")],
                      n_features=6, seed=5)
    return generate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
