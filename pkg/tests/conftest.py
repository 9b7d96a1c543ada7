import functools

import numpy as np
import pytest

from basinkit import pipeline
from basinkit.config import default_config

FIXTURE_SEEDS = (0, 1, 2, 3, 4)
FAST_POOL = 30


@functools.lru_cache(maxsize=None)
def bundled_fixture(seed: int, n_models: int = FAST_POOL):
    """Bundled desk config re-seeded with ``seed``: dataset split and trained pools."""
    cfg = default_config().with_seed(seed)
    split = pipeline.load_dataset(cfg)
    run = pipeline.train_pools(cfg, split, n_models=n_models)
    return cfg, split, run


@pytest.fixture(scope="session")
def fixture_pool():
    return bundled_fixture


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion -> "PASS ..." / "FAIL ..." line, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
