import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mixbias.expectation import QuadratureSpec  # noqa: E402
from mixbias.families import (  # noqa: E402
    Exponential,
    GaussianMeanKnownVar,
    GaussianMeanVar,
    Poisson,
)
from mixbias.scenarios import canonical_model  # noqa: E402

ACCEPTANCE_LINES = []


# family, a grid of valid parameters, and a (low, high) range for random draws
FAMILY_GRIDS = [
    (GaussianMeanKnownVar(1.0), [[-3.0], [-0.5], [0.0], [1.7], [4.0]]),
    (GaussianMeanKnownVar(2.5), [[-1.0], [0.0], [0.3], [2.0], [6.0]]),
    (GaussianMeanVar(), [[0.0, 1.0], [-1.0, 0.3], [2.0, 4.0], [0.5, 2.0], [-4.0, 0.7]]),
    (Poisson(), [[0.2], [0.5], [1.0], [3.0], [12.0]]),
    (Exponential(), [[0.3], [0.5], [1.0], [2.0], [7.0]]),
]


@pytest.fixture(scope="session")
def experiments():
    """The shipped consistency configs, run once per session (about 15 s each)."""
    from mixbias.config import build, experiment_config, load_config
    from mixbias.consistency import run_consistency_experiment

    configs = Path(__file__).resolve().parent.parent / "configs"
    cache = {}

    def get(name):
        if name not in cache:
            cfg = experiment_config(build(load_config(configs / f"consistency_{name}.json")))
            cache[name] = run_consistency_experiment(cfg)
        return cache[name]

    return get


@pytest.fixture
def canonical():
    return canonical_model()


@pytest.fixture
def qspec():
    return QuadratureSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
