import warnings

import numpy as np
import pytest

from xdecode.synth import SynthConfig, generate_synth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    """A 40-feature two-domain problem with a rotated target."""
    cfg = SynthConfig(
        n_features=40,
        n_source=120,
        n_target=80,
        trial_length=5,
        class_separation=2.5,
        informative=tuple(range(10)),
        rotation_deg=30,
        seed=3,
    )
    return generate_synth(cfg)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
