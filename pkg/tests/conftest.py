import numpy as np
import pytest

from mln.config import EditConfig, preset
from mln.pipeline import build_model
from mln.tokenizer import Codebook, ScaleSchedule


@pytest.fixture(scope="session")
def desk():
    return preset("desk")


@pytest.fixture(scope="session")
def desk_model(desk):
    return build_model(desk)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_codebook():
    return Codebook.uniform(16, 4, seed=3)


@pytest.fixture(scope="session")
def small_schedule():
    return ScaleSchedule.square((1, 2, 4, 8))


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_log(request):
    return request.config.stash[_ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line[1])
