"""Seeded random trees, datasets and ensembles for tests and demos."""

from __future__ import annotations

import numpy as np

from .forest import Dataset, Ensemble, Tree, TreeNode, finalize_tree, with_stats


def random_tree(rng: np.random.Generator, max_depth: int, n_features: int, split_prob: float = 0.8, max_children: int = 2) -> Tree:
    """Random structure with thresholds in (0, 1); stats are left empty."""
    nodes: list[TreeNode] = []

    def grow(depth: int) -> int:
        h = len(nodes)
        nodes.append(TreeNode(id=h))
        if depth >= max_depth or (depth > 0 and rng.random() > split_prob):
            return h
        arity = int(rng.integers(2, max_children + 1))
        k = int(rng.integers(n_features))
        thr = tuple(float(v) for v in np.sort(rng.uniform(0.05, 0.95, arity - 1)))
        children = tuple(grow(depth + 1) for _ in range(arity))
        nodes[h] = TreeNode(id=h, feature=k, thresholds=thr, children=children)
        return h

    grow(0)
    return finalize_tree(nodes, 1)


def random_dataset(rng: np.random.Generator, n_examples: int, n_features: int, n_classes: int = 2, noise: float = 0.3) -> Dataset:
    """Labels depend on a random linear score so trees have something to learn."""
    X = rng.random((n_examples, n_features))
    w = rng.normal(size=(n_features, n_classes))
    score = (X - 0.5) @ w + noise * rng.normal(size=(n_examples, n_classes))
    y = np.argmax(score, axis=1)
    return Dataset(X, y, n_classes)


def random_instance(
    rng: np.random.Generator,
    n_trees: int = 2,
    max_depth: int = 3,
    n_examples: int = 20,
    n_features: int = 4,
    n_classes: int = 2,
    unit_costs: bool = False,
    max_children: int = 2,
) -> tuple[Ensemble, Dataset]:
    data = random_dataset(rng, n_examples, n_features, n_classes)
    trees = [random_tree(rng, max_depth, n_features, max_children=max_children) for _ in range(n_trees)]
    costs = np.ones(n_features) if unit_costs else np.round(rng.uniform(0.1, 3.0, n_features), 3)
    ens = Ensemble(trees, costs, n_classes)
    return with_stats(ens, data), data


def shared_feature_instance(rng: np.random.Generator, n_trees: int = 3, n_examples: int = 40, n_features: int = 5, expensive: float = 10.0) -> tuple[Ensemble, Dataset, Dataset]:
    """Trees whose roots all split on one expensive, informative feature.

    Returns the ensemble (stats on train) plus train and test sets drawn from
    the same distribution.
    """
    def draw(n):
        X = rng.random((n, n_features))
        score = 2.0 * (X[:, 0] - 0.5) + 0.6 * (X[:, 1:].mean(axis=1) - 0.5)
        y = (score + 0.25 * rng.normal(size=n) > 0).astype(np.int64)
        return Dataset(X, y, 2)

    train, test = draw(n_examples), draw(n_examples)
    trees = []
    for _ in range(n_trees):
        sub = random_tree(rng, 2, n_features)
        nodes = [TreeNode(id=0, feature=0, thresholds=(float(rng.uniform(0.4, 0.6)),), children=(1, 1 + len(sub)))]
        shift_a = _shift(sub.nodes, 1)
        other = random_tree(rng, 2, n_features)
        shift_b = _shift(other.nodes, 1 + len(sub))
        nodes += shift_a + shift_b
        trees.append(finalize_tree(nodes, 2))
    costs = np.ones(n_features)
    costs[0] = expensive
    ens = Ensemble(trees, costs, 2)
    return with_stats(ens, train), train, test


def _shift(nodes, offset: int) -> list[TreeNode]:
    return [
        TreeNode(id=n.id + offset, feature=n.feature, thresholds=n.thresholds, children=tuple(c + offset for c in n.children))
        for n in nodes
    ]
