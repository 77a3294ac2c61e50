"""Shared fixtures: the bundled MNIST subset and the two desk models trained on it."""

from pathlib import Path

import numpy as np
import pytest

from rdattack.datasets import Dataset, load_idx
from rdattack.netcore import DenseLayer, Network, TrainConfig, init_network, train

DATA = Path(__file__).parent / "data"

DESK_SIZES = [784, 256, 128, 10]
DESK_SEED = 0
SUBSTITUTE_SIZES = [784, 300, 100, 10]
SUBSTITUTE_SEED = 1


def mnist_paths(split):
    return (
        DATA / f"mnist5k-{split}-images-idx3-ubyte.gz",
        DATA / f"mnist5k-{split}-labels-idx1-ubyte.gz",
    )


@pytest.fixture(scope="session")
def mnist_train():
    return load_idx(*mnist_paths("train"))


@pytest.fixture(scope="session")
def mnist_test():
    return load_idx(*mnist_paths("test"))


@pytest.fixture(scope="session")
def desk_model(mnist_train, mnist_test):
    net = init_network(DESK_SIZES, seed=DESK_SEED)
    return train(net, mnist_train, TrainConfig(seed=DESK_SEED), test=mnist_test)


@pytest.fixture(scope="session")
def substitute_model(mnist_train, mnist_test):
    net = init_network(SUBSTITUTE_SIZES, seed=SUBSTITUTE_SEED)
    return train(net, mnist_train, TrainConfig(seed=SUBSTITUTE_SEED), test=mnist_test)


@pytest.fixture(scope="session")
def desk_filtered(desk_model, mnist_test):
    from rdattack.evalharness import select_correctly_classified

    return select_correctly_classified(desk_model, mnist_test)


def linear_net(W, b):
    """A single affine layer producing logits ``W x + b``."""
    return Network([DenseLayer(np.asarray(W, dtype=np.float32), np.asarray(b, dtype=np.float32), "identity")])


def small_dataset(n=40, m=6, c=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((n, m), dtype=np.float32), rng.integers(0, c, n), c)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def _criterion_order(line):
    tag = line.split()[1]
    digits = "".join(ch for ch in tag if ch.isdigit())
    return int(digits), line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_order):
            terminalreporter.write_line(line)
