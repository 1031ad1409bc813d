"""Brute-force ground truth: pruning enumeration, exhaustive ensemble search,
and vertex enumeration for tiny LPs.

Everything here is deliberately independent of the LP machinery. Costs are
computed by routing examples through the pruned trees, not by reading the
first-use attachments used to build the program.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb, prod

import numpy as np

from .errors import CostPruneError
from .forest import Dataset, Ensemble, Tree, leaf_of

MAX_NODES = 63
MAX_COMBINATIONS = 10**6


class GuardExceeded(CostPruneError):
    """Instance too large for exhaustive search."""


@dataclass(frozen=True)
class PruningEnumeration:
    tree: Tree
    leaf_sets: tuple[frozenset[int], ...]

    @property
    def count(self) -> int:
        return len(self.leaf_sets)


def count_prunings(tree: Tree) -> int:
    """P(leaf) = 1, P(internal) = 1 + prod over children."""
    p = [1] * len(tree)
    for h in range(len(tree) - 1, -1, -1):
        node = tree.nodes[h]
        if not node.is_leaf:
            p[h] = 1 + prod(p[c] for c in node.children)
    return p[0]


def enumerate_prunings(tree: Tree, guard: int = MAX_NODES) -> PruningEnumeration:
    if len(tree) > guard:
        raise GuardExceeded(f"tree has {len(tree)} nodes; enumeration is limited to {guard}")
    memo: dict[int, list[frozenset[int]]] = {}
    for h in range(len(tree) - 1, -1, -1):
        node = tree.nodes[h]
        out = [frozenset((h,))]
        if not node.is_leaf:
            for combo in itertools.product(*(memo[c] for c in node.children)):
                out.append(frozenset().union(*combo))
        memo[h] = out
    return PruningEnumeration(tree, tuple(memo[0]))


def is_valid_pruning(tree: Tree, leaves) -> bool:
    """Root rule, sibling rule, and no retained leaf below another."""
    leaves = set(int(h) for h in leaves)
    if not leaves or any(not 0 <= h < len(tree) for h in leaves):
        return False
    internal = set()
    for h in leaves:
        internal.update(tree.predecessors(h))
    if internal & leaves:
        return False
    kept = internal | leaves
    if 0 not in kept:
        return False
    for h in kept:
        if h == 0:
            continue
        p = int(tree.parent[h])
        if p not in internal:
            return False
        if any(s not in kept for s in tree.nodes[p].children):
            return False
    # every internal node must really be internal in the original tree
    return all(not tree.nodes[u].is_leaf for u in internal)


def _stop_mask(tree: Tree, leaves) -> np.ndarray:
    mask = np.zeros(len(tree), dtype=bool)
    mask[list(leaves)] = True
    return mask


def feature_masks(tree: Tree, leaves, X: np.ndarray) -> np.ndarray:
    """Per-example bitmask of features read on the path through the pruned tree."""
    ends = leaf_of(tree, X, _stop_mask(tree, leaves))
    node_mask = np.zeros(len(tree), dtype=np.uint64)
    for h in range(len(tree)):
        m = 0
        for u in tree.predecessors(h):
            m |= 1 << tree.nodes[u].feature
        node_mask[h] = m
    return node_mask[ends]


def _mask_cost(masks: np.ndarray, costs: np.ndarray) -> float:
    total = 0.0
    for k, c in enumerate(costs):
        if c:
            total += c * np.count_nonzero((masks >> np.uint64(k)) & np.uint64(1))
    return float(total)


def pruning_objective(ens: Ensemble, data: Dataset, prunings, lam: float) -> tuple[float, float, float]:
    """(objective, error term, cost term) of one pruning tuple with shared costs."""
    N, T = data.n_examples, ens.n_trees
    err = sum(float(ens.trees[t].errors[list(l)].sum()) for t, l in enumerate(prunings)) / (N * T)
    masks = np.zeros(N, dtype=np.uint64)
    for t, l in enumerate(prunings):
        masks |= feature_masks(ens.trees[t], l, data.X)
    cost = _mask_cost(masks, np.asarray(ens.feature_costs)) / N
    return err + lam * cost, err, cost


def brute_force_optimum(ens: Ensemble, data: Dataset, lam: float, guard: int = MAX_COMBINATIONS) -> tuple[float, tuple[frozenset[int], ...]]:
    """Exact minimum over every combination of prunings.

    Ties keep the first combination in product order.
    """
    if ens.n_features > 64:
        raise GuardExceeded("feature bitmasks support at most 64 features")
    enums = [enumerate_prunings(tree) for tree in ens.trees]
    total = prod(e.count for e in enums)
    if total > guard:
        raise GuardExceeded(f"{total} pruning combinations exceed the guard of {guard}")
    N, T = data.n_examples, ens.n_trees
    costs = np.asarray(ens.feature_costs, dtype=float)
    per_tree = []
    for tree, e in zip(ens.trees, enums):
        errs = [float(tree.errors[list(l)].sum()) / (N * T) for l in e.leaf_sets]
        masks = [feature_masks(tree, l, data.X) for l in e.leaf_sets]
        per_tree.append((errs, masks))

    best = (np.inf, None)
    zero = np.zeros(N, dtype=np.uint64)
    for combo in itertools.product(*(range(e.count) for e in enums)):
        err = 0.0
        m = zero
        for t, j in enumerate(combo):
            err += per_tree[t][0][j]
            m = m | per_tree[t][1][j]
        obj = err + lam * _mask_cost(m, costs) / N
        if obj < best[0] - 1e-12:
            best = (obj, combo)
    obj, combo = best
    return float(obj), tuple(enums[t].leaf_sets[j] for t, j in enumerate(combo))


def enumerate_vertices(A, b, cost, guard: int = 200_000) -> tuple[float, list[np.ndarray]]:
    """Optimal value and all basic feasible solutions of min c'x, Ax=b, x>=0.

    Dense and exponential; only for tiny LPs. Returns ``inf`` when infeasible.
    """
    A = np.asarray(A.todense() if hasattr(A, "todense") else A, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    m, n = A.shape
    rank = np.linalg.matrix_rank(A)
    if comb(n, rank) > guard:
        raise GuardExceeded(f"C({n},{rank}) bases exceed the guard of {guard}")
    # keep a maximal independent row subset so bases are square
    rows: list[int] = []
    for r in range(m):
        if np.linalg.matrix_rank(A[rows + [r]]) > len(rows):
            rows.append(r)
    Ar, br = A[rows], b[rows]
    vertices: list[np.ndarray] = []
    best = np.inf
    for cols in itertools.combinations(range(n), rank):
        B = Ar[:, cols]
        if abs(np.linalg.det(B)) < 1e-10:
            continue
        xb = np.linalg.solve(B, br)
        if np.any(xb < -1e-9):
            continue
        x = np.zeros(n)
        x[list(cols)] = np.maximum(xb, 0.0)
        if np.max(np.abs(A @ x - b), initial=0.0) > 1e-8:
            continue
        if not any(np.allclose(x, v, atol=1e-9) for v in vertices):
            vertices.append(x)
            best = min(best, float(cost @ x))
    return best, vertices
