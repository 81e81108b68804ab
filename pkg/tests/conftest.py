import numpy as np
import pytest

from hdtomo.states import HeraldedStateModel
from hdtomo.synth import AcquisitionConfig, synth_dataset


@pytest.fixture(scope="session")
def small_cfg():
    return AcquisitionConfig(n_traces=400, seed=7)


@pytest.fixture(scope="session")
def small_dataset(small_cfg):
    return synth_dataset(small_cfg)


@pytest.fixture(scope="session")
def squeezed_cfg():
    # squeezed-vacuum input, no electronic noise: the whole field is one squeezed state
    return AcquisitionConfig(n_traces=2000, seed=11, snr_db=None, eta_hd=1.0,
                             state=HeraldedStateModel(r=0.5, xi=0.0, eta_prep=1.0))


@pytest.fixture(scope="session")
def squeezed_dataset(squeezed_cfg):
    return synth_dataset(squeezed_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def verdict():
    """Record and print one PASS/FAIL line per acceptance criterion, then assert it."""
    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
