import numpy as np
import pytest

from attnmil.dataset import Bag, MilDataset, SyntheticSpec, generate_synthetic


def assert_datasets_equal(a: MilDataset, b: MilDataset):
    assert a.feature_dim == b.feature_dim
    assert a.bag_ids == b.bag_ids
    for x, y in zip(a.bags, b.bags):
        assert x.label == y.label
        assert x.witness == y.witness
        np.testing.assert_array_equal(x.instances, y.instances)


@pytest.fixture
def small_dataset():
    return generate_synthetic(SyntheticSpec(n_pos=12, n_neg=8, feature_dim=6, n_signal_dims=3,
                                            bag_size_range=(1, 5), witness_shift=3.0, seed=42))


@pytest.fixture
def toy_bags():
    return [
        Bag("a", 1, [[0.0, 1.0], [2.0, 3.0]]),
        Bag("b", 0, [[1.0, 1.0]]),
        Bag("c", 1, [[4.0, 0.0], [0.0, 0.0], [1.0, 2.0]]),
    ]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
