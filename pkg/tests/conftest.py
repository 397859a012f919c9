import numpy as np
import pytest

from iterinv.intent import EmbedConfig
from iterinv.numkit import RngStream
from iterinv.particle import EnvConfig


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def env():
    return EnvConfig()


@pytest.fixture
def embed_cfg(env):
    return EmbedConfig(c_max=env.c_max)


@pytest.fixture
def np_rng():
    return np.random.default_rng(99)


def pytest_terminal_summary(terminalreporter):
    from tests.acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
