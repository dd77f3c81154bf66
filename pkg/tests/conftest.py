import numpy as np
import pytest

from aapb.harness.config import RunConfig
from aapb.harness.experiment import train_or_load
from aapb.schedule import NoiseSchedule


@pytest.fixture(scope="session")
def schedule():
    return NoiseSchedule.linear()


@pytest.fixture(scope="session")
def trained_net(tmp_path_factory):
    """The default toy network, trained once per session (about a minute)."""
    return train_or_load(RunConfig(), cache_dir=tmp_path_factory.mktemp("net"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line and assert it; lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(label: str, passed, detail: str):
        status = "N/A " if passed is None else ("PASS" if passed else "FAIL")
        lines.append(f"{status}  {label:<34} {detail}")
        if passed is None:
            pytest.skip(detail)
        assert passed, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
