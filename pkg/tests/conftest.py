import numpy as np
import pytest
import torch

from facesketch.dataio import NUM_CLASSES, labels_to_onehot, make_fixture


def random_case(rng, h, w, empty=0):
    """Random sketch and one-hot layout; ``empty`` classes are left unused."""
    classes = np.arange(NUM_CLASSES)
    if empty:
        classes = rng.choice(classes, NUM_CLASSES - empty, replace=False)
    labels = rng.choice(classes, size=(h, w))
    f = rng.uniform(-1, 1, size=(h, w))
    return f, labels_to_onehot(labels)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def fixture64():
    return make_fixture(7, 4, 64)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def block_case(rng, h_blocks, w_blocks, block=4):
    """Random sketch over a layout made of ``block``-sized square regions,
    closer to real parsing maps than per-pixel random labels."""
    labels = rng.integers(0, NUM_CLASSES, size=(h_blocks, w_blocks))
    labels = labels.repeat(block, 0).repeat(block, 1)
    f = rng.uniform(-1, 1, size=labels.shape)
    return f, labels_to_onehot(labels)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
