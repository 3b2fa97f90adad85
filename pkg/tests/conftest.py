import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from safenav import envsim
from safenav.gcrl import TrainConfig, finetune, train

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TINY = TrainConfig(iterations=400, finetune_iterations=150, initial_collect=300, hidden=32,
                   batch_size=32, buffer_size=5000, log_interval=100, eval_interval=200,
                   eval_episodes=4, sample_population=32, sample_k=8, seed=7)


@pytest.fixture(scope="session")
def world():
    return envsim.central_obstacle()


@pytest.fixture(scope="session")
def tiny_cfg():
    return TINY


@pytest.fixture(scope="session")
def tiny_run(world):
    """A few hundred updates of both phases: enough to exercise every code path."""
    ck1, log1 = train(TINY, world)
    ck2, log2 = finetune(ck1)
    return ck1, log1, ck2, log2


@pytest.fixture(scope="session")
def tiny_ckpt(tiny_run):
    return tiny_run[2]


def tiny_with(**kw) -> TrainConfig:
    return dataclasses.replace(TINY, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
