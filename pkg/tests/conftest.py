import numpy as np
import pytest

from forestagb.reference import TrainingTable
from forestagb.synth import SynthWorldSpec, generate, write_world

SMALL_WORLD = dict(nrows=60, ncols=60, cellsize=500.0, n_plots=120, n_bumps=12,
                   n_disturbances=2, lidar_strata=10, lidar_per_stratum=30, seed=11)


def make_table(n=80, p=4, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, p))
    y = 50 + 20 * X[:, 0] - 10 * X[:, 1] + 5 * X[:, 0] * X[:, 1] + rng.normal(0, noise, n)
    return TrainingTable.from_arrays(X, y)


@pytest.fixture
def table():
    return make_table()


@pytest.fixture(scope="session")
def small_world():
    return generate(SynthWorldSpec(**SMALL_WORLD))


@pytest.fixture(scope="session")
def world_dir(tmp_path_factory, small_world):
    out = tmp_path_factory.mktemp("world")
    write_world(small_world, out)
    return out


# acceptance results: criterion number -> (passed, title, detail)
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
