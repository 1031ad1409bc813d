import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import N
from costprune.errors import ModelDataMismatch, SchemaError
from costprune.forest import (
    Dataset,
    Tree,
    compute_node_stats,
    compute_routing_profile,
    finalize_tree,
    leaf_of,
    partition,
    route_example,
)
from costprune.synthetic import random_instance, random_tree


def balanced(depth: int) -> Tree:
    """Complete binary tree splitting on feature = depth, threshold 0.5."""
    nodes = []

    def grow(d):
        h = len(nodes)
        nodes.append(None)
        if d == depth:
            nodes[h] = N(h)
            return h
        left = grow(d + 1)
        right = grow(d + 1)
        nodes[h] = N(h, d, (0.5,), (left, right))
        return h

    grow(0)
    return finalize_tree(nodes, 2)


class TestRouting:
    def test_root_only(self):
        tree = finalize_tree([N(0)], 2)
        assert route_example(tree, [0.3, 9.0]) == [0]

    def test_two_tree_paths(self, two_trees):
        x = [0.8, 0.5, 0.2]
        assert route_example(two_trees.trees[0], x) == [0, 2, 3]
        assert route_example(two_trees.trees[1], x) == [0, 4, 5]

    def test_balanced_hand_walk(self):
        tree = balanced(3)
        # 0.2 <= 0.5 left to node 1; 0.7 > 0.5 right to node 5; 0.9 right to leaf 7
        assert route_example(tree, [0.2, 0.7, 0.9]) == [0, 1, 5, 7]

    def test_threshold_equality_goes_left(self):
        tree = finalize_tree([N(0, 0, (0.5,), (1, 2)), N(1), N(2)], 2)
        assert route_example(tree, [0.5]) == [0, 1]
        assert route_example(tree, [np.nextafter(0.5, 1)]) == [0, 2]

    def test_multiway_split(self):
        tree = finalize_tree([N(0, 0, (0.2, 0.6), (1, 2, 3)), N(1), N(2), N(3)], 2)
        assert [route_example(tree, [v])[-1] for v in (0.1, 0.2, 0.5, 0.6, 0.9)] == [1, 1, 2, 2, 3]

    def test_feature_out_of_range(self, two_trees):
        with pytest.raises(ModelDataMismatch):
            route_example(two_trees.trees[1], [0.1, 0.9])

    def test_partition_matches_route(self, rng):
        ens, data = random_instance(rng, n_trees=2, max_depth=4, n_examples=30, n_features=4)
        for tree in ens.trees:
            members = partition(tree, data.X)
            leaf = leaf_of(tree, data.X)
            for i in range(data.n_examples):
                path = route_example(tree, data.X[i])
                assert path[-1] == leaf[i]
                assert all(i in members[h] for h in path)


class TestNodeStats:
    def test_root_only_majority(self):
        tree = compute_node_stats(finalize_tree([N(0)], 2), Dataset(np.zeros((3, 1)), np.array([0, 0, 1]), 2))
        root = tree.nodes[0]
        assert root.class_counts == (2, 1) and root.pred == 0 and root.err == 1

    def test_tie_breaks_to_lowest_class(self):
        tree = compute_node_stats(finalize_tree([N(0)], 2), Dataset(np.zeros((4, 1)), np.array([0, 0, 1, 1]), 2))
        assert tree.nodes[0].pred == 0 and tree.nodes[0].err == 2

    def test_pure_stump(self):
        stump = finalize_tree([N(0, 0, (0.5,), (1, 2)), N(1), N(2)], 2)
        data = Dataset(np.array([[0.1], [0.2], [0.9], [0.8], [0.7]]), np.array([0, 0, 1, 1, 1]), 2)
        tree = compute_node_stats(stump, data)
        assert [n.err for n in tree.nodes] == [2, 0, 0]
        assert tree.nodes[0].n_examples == 5

    def test_empty_node_inherits(self):
        stump = finalize_tree([N(0, 0, (0.5,), (1, 2)), N(1), N(2)], 2)
        data = Dataset(np.array([[0.1], [0.2], [0.3]]), np.array([1, 1, 0]), 2)
        tree = compute_node_stats(stump, data)
        assert tree.nodes[2].class_counts == (0, 0)
        assert tree.nodes[2].pred == 1 and tree.nodes[2].err == 0

    def test_empty_dataset_rejected(self):
        with pytest.raises(ModelDataMismatch):
            Dataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_refinement_never_increases_error(self, seed):
        rng = np.random.default_rng(seed)
        ens, _ = random_instance(rng, n_trees=1, max_depth=4, n_examples=25, n_features=3, n_classes=3)
        tree = ens.trees[0]
        e = tree.errors
        for h in range(len(tree)):
            below = [l for l in tree.subtree(h) if tree.nodes[l].is_leaf]
            assert e[h] >= e[below].sum()
            if not tree.nodes[h].is_leaf:
                counts = np.sum([tree.nodes[c].class_counts for c in tree.nodes[h].children], axis=0)
                assert tuple(counts) == tree.nodes[h].class_counts


class TestLayout:
    def test_non_preorder_rejected(self):
        with pytest.raises(SchemaError):
            Tree([N(0, 0, (0.5,), (2, 1)), N(1), N(2)])

    def test_unreachable_rejected(self):
        with pytest.raises(SchemaError):
            Tree([N(0, 0, (0.5,), (1, 2)), N(1), N(2), N(3)])

    def test_leaf_with_feature_rejected(self):
        with pytest.raises(SchemaError):
            Tree([N(0, 1)])

    def test_accessors(self, two_trees):
        t2 = two_trees.trees[1]
        assert t2.predecessors(5) == [0, 4]
        assert t2.siblings(4) == [1]
        assert list(t2.subtree(1)) == [1, 2, 3]
        assert t2.leaves == [2, 3, 5, 6]
        assert list(t2.n_internal_below()) == [3, 1, 0, 0, 1, 0, 0]


class TestRoutingProfile:
    def test_two_tree_first_use(self, two_trees, single_example):
        prof = compute_routing_profile(two_trees, single_example)
        assert prof.used_features(0, 0) == {0, 1}
        assert prof.first_use(0, 0) == {0: 0, 1: 2}
        assert prof.used_features(1, 0) == {1, 2}
        assert prof.first_use(1, 0) == {1: 0, 2: 4}

    def test_root_only_has_no_features(self):
        from costprune.forest import Ensemble

        ens = Ensemble([finalize_tree([N(0)], 2)] * 2, np.ones(2), 2)
        prof = compute_routing_profile(ens, np.random.default_rng(0).random((5, 2)))
        assert all(prof.used_features(t, i) == frozenset() for t in range(2) for i in range(5))

    def test_repeated_feature_recorded_once(self):
        from costprune.forest import Ensemble

        tree = finalize_tree([N(0, 0, (0.5,), (1, 2)), N(1), N(2, 0, (0.8,), (3, 4)), N(3), N(4)], 2)
        prof = compute_routing_profile(Ensemble([tree], np.ones(1), 2), np.array([[0.9]]))
        assert prof.trees[0].attachments(0) == ((0, 0),)

    def test_first_use_is_shallowest(self, rng):
        ens, data = random_instance(rng, n_trees=3, max_depth=4, n_examples=30, n_features=3)
        prof = compute_routing_profile(ens, data)
        for t, tree in enumerate(ens.trees):
            for i in range(data.n_examples):
                path = prof.path(ens, t, i)
                used = {tree.nodes[u].feature for u in path[:-1]}
                assert prof.used_features(t, i) == used
                for k, u in prof.first_use(t, i).items():
                    assert u in path and tree.nodes[u].feature == k
                    assert all(tree.nodes[a].feature != k for a in tree.predecessors(u))

    def test_pure(self, rng):
        ens, data = random_instance(rng, n_trees=2, max_depth=3, n_examples=15, n_features=3)
        assert compute_routing_profile(ens, data) == compute_routing_profile(ens, data)


def test_random_tree_is_preorder(rng):
    for _ in range(20):
        tree = random_tree(rng, 4, 5, max_children=3)
        assert all(tree.parent[h] < h for h in range(1, len(tree)))
