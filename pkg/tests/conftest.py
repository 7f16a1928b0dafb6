from pathlib import Path

import numpy as np
import pytest

from submfl.data import synthetic_blobs
from submfl.nn import NetworkSpec, init_network

ROOT = Path(__file__).resolve().parents[1]
MNIST_IMAGES = ROOT / "data" / "mnist10k" / "images-idx3-ubyte.gz"
MNIST_LABELS = ROOT / "data" / "mnist10k" / "labels-idx1-ubyte.gz"
DESK_CONFIG = ROOT / "configs" / "desk.cfg"

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def small_spec():
    return NetworkSpec((6, 5, 3))


@pytest.fixture
def small_params(small_spec):
    return init_network(small_spec, seed=11)


@pytest.fixture(scope="session")
def blobs():
    return synthetic_blobs(600, 4, 6, separation=12.0, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
