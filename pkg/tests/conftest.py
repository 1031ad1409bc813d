import numpy as np
import pytest

from costprune.forest import Dataset, Ensemble, TreeNode, finalize_tree, with_stats


def N(id, feature=None, thr=(), children=()):
    return TreeNode(id=id, feature=feature, thresholds=tuple(thr), children=tuple(children))


def two_tree_ensemble() -> Ensemble:
    """Tree 1 splits on feature 0 at the root and 1 below; tree 2 on 1, then 0 and 2."""
    t1 = [N(0, 0, (0.5,), (1, 2)), N(1), N(2, 1, (0.7,), (3, 4)), N(3), N(4)]
    t2 = [N(0, 1, (0.3,), (1, 4)), N(1, 0, (0.5,), (2, 3)), N(2), N(3), N(4, 2, (0.5,), (5, 6)), N(5), N(6)]
    return Ensemble([finalize_tree(t1, 2), finalize_tree(t2, 2)], np.ones(3), 2)


def one_example() -> Dataset:
    # reaches tree-1 node 3 and tree-2 node 5
    return Dataset(np.array([[0.8, 0.5, 0.2]]), np.array([0]), 2)


@pytest.fixture
def two_trees():
    return two_tree_ensemble()


@pytest.fixture
def single_example():
    return one_example()


@pytest.fixture
def two_trees_with_stats():
    return with_stats(two_tree_ensemble(), one_example()), one_example()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
