import numpy as np
import pytest
from hypothesis import settings

from cloudmw.domain import Label, VmSnapshot

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_snapshot(keys, values, t=0.0, label=Label.BENIGN, experiment_id=0, vm_id=0):
    return VmSnapshot(experiment_id, vm_id, t, tuple(keys), np.asarray(values, dtype=np.float64), label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
