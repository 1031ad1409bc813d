"""Decision-tree and ensemble data model.

Trees are stored as flat, preorder-indexed node arrays. Every operation that
consumes a tree relies on the preorder layout: the subtree rooted at node ``h``
occupies the contiguous id range ``[h, subtree_end[h])``, and children appear
in increasing id order.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ModelDataMismatch, SchemaError


@dataclass(frozen=True)
class TreeNode:
    id: int
    feature: int | None = None
    thresholds: tuple[float, ...] = ()
    children: tuple[int, ...] = ()
    class_counts: tuple[int, ...] = ()
    pred: int = 0
    err: int = 0

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def n_examples(self) -> int:
        return int(sum(self.class_counts))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    label_map: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise ModelDataMismatch("X must be a 2-d array")
        if X.shape[0] != y.shape[0]:
            raise ModelDataMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]} labels")
        if X.shape[0] == 0:
            raise ModelDataMismatch("empty dataset")
        if not np.all(np.isfinite(X)):
            raise ModelDataMismatch("dataset contains non-finite feature values")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ModelDataMismatch(f"labels must lie in [0, {self.n_classes})")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_examples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


class Tree:
    """Immutable preorder decision tree.

    Internal nodes route ``x`` to child ``j`` where ``j`` is the number of
    thresholds strictly below ``x[feature]``; for a binary split this is the
    usual "left iff x <= threshold" rule.
    """

    def __init__(self, nodes: Sequence[TreeNode]):
        nodes = tuple(nodes)
        self.nodes = nodes
        n = len(nodes)
        self.parent = np.full(n, -1, dtype=np.int64)
        self.depth = np.zeros(n, dtype=np.int64)
        self.subtree_end = np.zeros(n, dtype=np.int64)
        self._check_preorder()
        self.parent.setflags(write=False)
        self.depth.setflags(write=False)
        self.subtree_end.setflags(write=False)

    def _check_preorder(self):
        nodes = self.nodes
        if not nodes:
            raise SchemaError("tree has no nodes")
        for pos, node in enumerate(nodes):
            if node.id != pos:
                raise SchemaError(f"node at position {pos} has id {node.id}; ids must be contiguous preorder")
            if (node.feature is None) != node.is_leaf:
                raise SchemaError(f"node {pos}: internal iff feature present")
            if not node.is_leaf:
                if len(node.children) < 2:
                    raise SchemaError(f"node {pos}: internal node needs at least two children")
                if len(node.thresholds) != len(node.children) - 1:
                    raise SchemaError(f"node {pos}: expected {len(node.children) - 1} thresholds")
                if list(node.thresholds) != sorted(node.thresholds):
                    raise SchemaError(f"node {pos}: thresholds must be nondecreasing")
                if node.feature < 0:
                    raise SchemaError(f"node {pos}: negative feature index")
            elif node.thresholds:
                raise SchemaError(f"node {pos}: leaf carries thresholds")

        # Iterative walk: every child must start exactly where the previous
        # sibling's subtree ended.
        def walk(root: int) -> int:
            stack = [(root, 0)]
            end = root + 1
            while stack:
                h, j = stack.pop()
                node = nodes[h]
                if j == 0:
                    expected = h + 1
                else:
                    expected = self.subtree_end[node.children[j - 1]]
                if j == len(node.children):
                    self.subtree_end[h] = expected if node.children else h + 1
                    end = self.subtree_end[h]
                    continue
                c = node.children[j]
                if c != expected or c >= len(nodes):
                    raise SchemaError(
                        f"node {h}: child {j} has id {c}, expected {expected} for a preorder layout"
                    )
                self.parent[c] = h
                self.depth[c] = self.depth[h] + 1
                stack.append((h, j + 1))
                stack.append((c, 0))
            return end

        end = walk(0)
        if end != len(nodes):
            raise SchemaError(f"nodes {end}..{len(nodes) - 1} are unreachable from the root")

    # accessors ---------------------------------------------------------
    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, h: int) -> TreeNode:
        return self.nodes[h]

    def __eq__(self, other) -> bool:
        return isinstance(other, Tree) and self.nodes == other.nodes

    def __hash__(self):
        return hash(self.nodes)

    def __repr__(self):
        return f"Tree(n_nodes={len(self)}, n_leaves={len(self.leaves)})"

    @property
    def leaves(self) -> list[int]:
        return [n.id for n in self.nodes if n.is_leaf]

    @property
    def internal(self) -> list[int]:
        return [n.id for n in self.nodes if not n.is_leaf]

    @property
    def errors(self) -> np.ndarray:
        return np.array([n.err for n in self.nodes], dtype=float)

    def predecessors(self, h: int) -> list[int]:
        """p(h): nodes strictly above ``h``, root first."""
        out = []
        u = int(self.parent[h])
        while u >= 0:
            out.append(u)
            u = int(self.parent[u])
        return out[::-1]

    def siblings(self, h: int) -> list[int]:
        p = int(self.parent[h])
        if p < 0:
            return []
        return [c for c in self.nodes[p].children if c != h]

    def subtree(self, h: int) -> range:
        return range(h, int(self.subtree_end[h]))

    def n_internal_below(self) -> np.ndarray:
        """Number of internal nodes in each subtree, the root of it included."""
        internal = np.array([0 if n.is_leaf else 1 for n in self.nodes], dtype=np.int64)
        csum = np.concatenate([[0], np.cumsum(internal)])
        return csum[self.subtree_end] - csum[np.arange(len(self))]

    @property
    def max_feature(self) -> int:
        feats = [n.feature for n in self.nodes if n.feature is not None]
        return max(feats) if feats else -1

    def child_for(self, h: int, value: float) -> int:
        node = self.nodes[h]
        return node.children[bisect_left(node.thresholds, value)]


class Ensemble:
    def __init__(self, trees: Sequence[Tree], feature_costs, n_classes: int | None = None):
        trees = tuple(trees)
        if not trees:
            raise SchemaError("ensemble needs at least one tree")
        costs = np.asarray(feature_costs, dtype=float).copy()
        if costs.ndim != 1:
            raise SchemaError("feature_costs must be a vector")
        if np.any(costs < 0) or not np.all(np.isfinite(costs)):
            raise SchemaError("feature costs must be finite and nonnegative")
        for t, tree in enumerate(trees):
            if tree.max_feature >= len(costs):
                raise SchemaError(
                    f"tree {t} splits on feature {tree.max_feature} but only {len(costs)} costs given"
                )
        if n_classes is None:
            n_classes = max(
                max((len(n.class_counts) for n in tree.nodes), default=0) for tree in trees
            )
            n_classes = max(n_classes, 1 + max(n.pred for tree in trees for n in tree.nodes))
        for t, tree in enumerate(trees):
            for n in tree.nodes:
                if n.pred >= n_classes or len(n.class_counts) > n_classes:
                    raise SchemaError(f"tree {t} node {n.id}: class index outside [0, {n_classes})")
        costs.setflags(write=False)
        self.trees = trees
        self.feature_costs = costs
        self.n_classes = int(n_classes)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return len(self.feature_costs)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Ensemble)
            and self.trees == other.trees
            and self.n_classes == other.n_classes
            and np.array_equal(self.feature_costs, other.feature_costs)
        )

    def __repr__(self):
        return f"Ensemble(n_trees={self.n_trees}, n_features={self.n_features}, n_classes={self.n_classes})"

    def with_trees(self, trees: Sequence[Tree]) -> "Ensemble":
        return Ensemble(trees, self.feature_costs, self.n_classes)


def finalize_tree(nodes: Sequence[TreeNode], n_classes: int | None = None) -> Tree:
    """Fill ``pred`` and ``err`` from ``class_counts``.

    Majority class with lowest-index tie-break; nodes with no examples inherit
    their parent's prediction and get zero error.
    """
    nodes = list(nodes)
    if n_classes is None:
        n_classes = max((len(n.class_counts) for n in nodes), default=1) or 1
    tree = Tree(nodes)  # validates layout before we trust parent pointers
    out = []
    for node in tree.nodes:
        counts = tuple(int(c) for c in node.class_counts) + (0,) * (n_classes - len(node.class_counts))
        total = sum(counts)
        if total == 0:
            p = int(tree.parent[node.id])
            pred = out[p].pred if p >= 0 else 0
            err = 0
        else:
            pred = int(np.argmax(counts))
            err = total - counts[pred]
        out.append(replace(node, class_counts=counts, pred=pred, err=err))
    return Tree(out)


def route_example(tree: Tree, x) -> list[int]:
    """Root-to-leaf path followed by ``x``."""
    x = np.asarray(x, dtype=float)
    h = 0
    path = [0]
    while not tree.nodes[h].is_leaf:
        k = tree.nodes[h].feature
        if k >= x.shape[0]:
            raise ModelDataMismatch(f"node {h} splits on feature {k} but x has {x.shape[0]} entries")
        h = tree.child_for(h, x[k])
        path.append(h)
    return path


def partition(tree: Tree, X: np.ndarray) -> list[np.ndarray]:
    """S_h for every node: indices of rows of ``X`` routed to or through ``h``."""
    X = np.asarray(X, dtype=float)
    if tree.max_feature >= X.shape[1]:
        raise ModelDataMismatch(
            f"tree splits on feature {tree.max_feature} but data has {X.shape[1]} features"
        )
    members: list[np.ndarray] = [None] * len(tree)  # type: ignore[list-item]
    members[0] = np.arange(X.shape[0])
    for node in tree.nodes:  # preorder: parents are always filled first
        idx = members[node.id]
        if node.is_leaf:
            continue
        slot = np.searchsorted(np.asarray(node.thresholds), X[idx, node.feature], side="left")
        for j, c in enumerate(node.children):
            members[c] = idx[slot == j]
    return members


def compute_node_stats(tree: Tree, data: Dataset) -> Tree:
    """Recompute class counts, majority predictions and e_h on ``data``."""
    if data.n_examples == 0:
        raise ModelDataMismatch("cannot compute node statistics on an empty dataset")
    members = partition(tree, data.X)
    nodes = [
        replace(
            node,
            class_counts=tuple(int(c) for c in np.bincount(data.y[members[node.id]], minlength=data.n_classes)),
        )
        for node in tree.nodes
    ]
    return finalize_tree(nodes, data.n_classes)


def leaf_of(tree: Tree, X: np.ndarray, stop: np.ndarray | None = None) -> np.ndarray:
    """Node each row of ``X`` ends at.

    With ``stop`` (boolean mask over nodes) routing halts at the first node on
    the path whose mask entry is set, which is how a pruned tree is evaluated
    without rebuilding it.
    """
    members = partition(tree, X)
    out = np.empty(X.shape[0], dtype=np.int64)
    assigned = np.zeros(X.shape[0], dtype=bool)
    for node in tree.nodes:
        if node.is_leaf or (stop is not None and stop[node.id]):
            idx = members[node.id]
            idx = idx[~assigned[idx]]
            out[idx] = node.id
            assigned[idx] = True
    return out


@dataclass(frozen=True)
class TreeRouting:
    """Routing of every example through one tree.

    ``leaf[i]`` is the leaf reached by example ``i``; ``first_use[l]`` lists
    ``(k, u)`` pairs, sorted by ``k``, giving the first node on the path to
    leaf ``l`` that splits on feature ``k``. Since the path depends only on
    the leaf, K_{t,i} and u_{t,k,i} are read off ``first_use[leaf[i]]``.
    """

    leaf: np.ndarray
    first_use: dict

    def attachments(self, i: int) -> tuple[tuple[int, int], ...]:
        return self.first_use[int(self.leaf[i])]

    def features(self, i: int) -> frozenset[int]:
        return frozenset(k for k, _ in self.attachments(i))


@dataclass(frozen=True)
class RoutingProfile:
    trees: tuple[TreeRouting, ...]
    n_examples: int

    def path(self, ens: Ensemble, t: int, i: int) -> list[int]:
        tree = ens.trees[t]
        leaf = int(self.trees[t].leaf[i])
        return tree.predecessors(leaf) + [leaf]

    def used_features(self, t: int, i: int) -> frozenset[int]:
        return self.trees[t].features(i)

    def first_use(self, t: int, i: int) -> dict[int, int]:
        return dict(self.trees[t].attachments(i))

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoutingProfile) or self.n_examples != other.n_examples:
            return False
        return all(
            np.array_equal(a.leaf, b.leaf) and a.first_use == b.first_use
            for a, b in zip(self.trees, other.trees, strict=True)
        )


def _first_use_by_leaf(tree: Tree) -> dict[int, tuple[tuple[int, int], ...]]:
    out = {}
    for leaf in tree.leaves:
        seen: dict[int, int] = {}
        for u in tree.predecessors(leaf):
            k = tree.nodes[u].feature
            if k not in seen:
                seen[k] = u
        out[leaf] = tuple(sorted(seen.items()))
    return out


def compute_routing_profile(ens: Ensemble, data: Dataset | np.ndarray) -> RoutingProfile:
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    routings = []
    for tree in ens.trees:
        leaf = leaf_of(tree, X)
        leaf.setflags(write=False)
        routings.append(TreeRouting(leaf=leaf, first_use=_first_use_by_leaf(tree)))
    return RoutingProfile(trees=tuple(routings), n_examples=X.shape[0])


def with_stats(ens: Ensemble, data: Dataset) -> Ensemble:
    if data.n_features < ens.n_features:
        raise ModelDataMismatch(f"data has {data.n_features} features, ensemble expects {ens.n_features}")
    return Ensemble([compute_node_stats(t, data) for t in ens.trees], ens.feature_costs, max(ens.n_classes, data.n_classes))
