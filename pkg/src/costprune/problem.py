"""Assembly of the 0/1 pruning program and its per-tree network form.

Variable layout (columns of the LP), fixed so golden matrices are stable:

    for each tree t:  z^(t)_h in preorder, then w^(t)_{k,i} sorted by (i, k)
    then global w_{k,i} sorted by (i, k)
    then one slack s^(t)_{k,i} per linking row

Rows: every tree's J1 block, then the linking rows J2 grouped by (i, k) and
ordered by t inside a group. A J2 row reads ``w^(t)_{k,i} - w_{k,i} + s = 0``.

Inside a tree block the J1 rows follow a depth-first walk in which every
w^(t)_{k,i} is treated as an extra, last child of its first-use node
u_{t,k,i}. Consecutive row differences then telescope into a network matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ModelDataMismatch
from .forest import Ensemble, RoutingProfile, Tree
from .simplex import StandardLP


@dataclass(frozen=True)
class Attachment:
    i: int
    k: int
    u: int


@dataclass(frozen=True)
class TreeBlock:
    t: int
    tree: Tree
    errors: np.ndarray
    attachments: tuple[Attachment, ...]
    rows: tuple[tuple[str, int], ...]
    z_offset: int
    wt_offset: int

    @property
    def n_vars(self) -> int:
        return len(self.tree) + len(self.attachments)

    def row_members(self, row: tuple[str, int]) -> tuple[list[int], int | None]:
        """z nodes and (local) w^(t) index appearing in a J1 row."""
        kind, ref = row
        if kind == "leaf":
            return self.tree.predecessors(ref) + [ref], None
        u = self.attachments[ref].u
        return self.tree.predecessors(u) + [u], ref

    def attachments_at(self) -> dict[int, list[int]]:
        by_node: dict[int, list[int]] = {}
        for a, att in enumerate(self.attachments):
            by_node.setdefault(att.u, []).append(a)
        return by_node


def _dfs_rows(tree: Tree, attachments: Sequence[Attachment]) -> tuple[tuple[str, int], ...]:
    by_node: dict[int, list[int]] = {}
    for a, att in enumerate(attachments):
        by_node.setdefault(att.u, []).append(a)
    rows: list[tuple[str, int]] = []
    # explicit stack; ("visit", h) expands children, ("attach", h) emits
    # the fictitious children of h after its real subtree
    stack: list[tuple[str, int]] = [("visit", 0)]
    while stack:
        kind, h = stack.pop()
        if kind == "attach":
            rows.extend(("attach", a) for a in by_node.get(h, ()))
            continue
        node = tree.nodes[h]
        if node.is_leaf:
            rows.append(("leaf", h))
            continue
        stack.append(("attach", h))
        stack.extend(("visit", c) for c in reversed(node.children))
    return tuple(rows)


@dataclass(frozen=True)
class PruningProblem:
    blocks: tuple[TreeBlock, ...]
    w_keys: tuple[tuple[int, int], ...]
    j2: tuple[tuple[int, int, int], ...]  # (t, local attachment, global w index)
    lam: float
    n_examples: int
    feature_costs: np.ndarray
    _lp: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_trees(self) -> int:
        return len(self.blocks)

    @cached_property
    def n_z(self) -> int:
        return sum(len(b.tree) for b in self.blocks)

    @cached_property
    def n_wt(self) -> int:
        return sum(len(b.attachments) for b in self.blocks)

    @property
    def n_w(self) -> int:
        return len(self.w_keys)

    @cached_property
    def w_offset(self) -> int:
        return self.n_z + self.n_wt

    @cached_property
    def s_offset(self) -> int:
        return self.w_offset + self.n_w

    @property
    def n_vars(self) -> int:
        return self.s_offset + len(self.j2)

    @property
    def n_j1(self) -> int:
        return sum(len(b.rows) for b in self.blocks)

    @property
    def n_rows(self) -> int:
        return self.n_j1 + len(self.j2)

    def with_lambda(self, lam: float) -> "PruningProblem":
        if lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {lam}")
        out = PruningProblem(self.blocks, self.w_keys, self.j2, float(lam), self.n_examples, self.feature_costs)
        if "A" in self._lp:
            out._lp["A"] = self._lp["A"]
            out._lp["b"] = self._lp["b"]
        return out

    # columns -----------------------------------------------------------
    def z_col(self, t: int, h: int) -> int:
        return self.blocks[t].z_offset + h

    def wt_col(self, t: int, a: int) -> int:
        return self.blocks[t].wt_offset + a

    def variable_names(self) -> list[str]:
        names = []
        for b in self.blocks:
            names += [f"z{b.t}_{h}" for h in range(len(b.tree))]
            names += [f"wt{b.t}_k{a.k}_i{a.i}" for a in b.attachments]
        names += [f"w_k{k}_i{i}" for i, k in self.w_keys]
        names += [f"s{t}_k{self.w_keys[g][1]}_i{self.w_keys[g][0]}" for t, _, g in self.j2]
        return names

    def objective(self) -> np.ndarray:
        N, T = self.n_examples, self.n_trees
        c = np.zeros(self.n_vars)
        for b in self.blocks:
            c[b.z_offset : b.z_offset + len(b.tree)] = b.errors / (N * T)
        for g, (_, k) in enumerate(self.w_keys):
            c[self.w_offset + g] = self.lam * self.feature_costs[k] / N
        return c

    def secondary_objective(self) -> np.ndarray:
        """Tie-break cost: prefer more retained internal nodes, then fewer w's.

        Minimising ``M * sum_u z_u * |internal(T_u)| + sum w`` over the optimal
        face selects the largest optimal pruning (unique, since the optimal
        prunings form a lattice) with w at its minimal value.
        """
        weight = self.n_w + 1.0
        c = np.zeros(self.n_vars)
        for b in self.blocks:
            c[b.z_offset : b.z_offset + len(b.tree)] = weight * b.tree.n_internal_below()
        c[self.w_offset : self.s_offset] = 1.0
        return c

    def _constraints(self):
        if "A" in self._lp:
            return self._lp["A"], self._lp["b"]
        rows, cols, vals = [], [], []
        r = 0
        for b in self.blocks:
            for row in b.rows:
                zs, a = b.row_members(row)
                for h in zs:
                    rows.append(r); cols.append(b.z_offset + h); vals.append(1.0)
                if a is not None:
                    rows.append(r); cols.append(b.wt_offset + a); vals.append(1.0)
                r += 1
        for j, (t, a, g) in enumerate(self.j2):
            rows += [r, r, r]
            cols += [self.wt_col(t, a), self.w_offset + g, self.s_offset + j]
            vals += [1.0, -1.0, 1.0]
            r += 1
        A = sp.csc_matrix((vals, (rows, cols)), shape=(self.n_rows, self.n_vars))
        b = np.concatenate([np.ones(self.n_j1), np.zeros(len(self.j2))])
        self._lp["A"], self._lp["b"] = A, b
        return A, b

    def to_standard_lp(self) -> StandardLP:
        A, b = self._constraints()
        return StandardLP(A, b, self.objective())

    def all_leaves_basis(self) -> np.ndarray:
        """A feasible basis at the unpruned point.

        J1 rows take their own leaf (real or fictitious) variable, which makes
        the J1 part an identity. Within each (i, k) group of J2 the first row
        takes w_{k,i} and the others their slack.
        """
        basis = []
        for b in self.blocks:
            for kind, ref in b.rows:
                basis.append(b.z_offset + ref if kind == "leaf" else b.wt_offset + ref)
        seen = set()
        for j, (_, _, g) in enumerate(self.j2):
            if g in seen:
                basis.append(self.s_offset + j)
            else:
                seen.add(g)
                basis.append(self.w_offset + g)
        return np.array(basis, dtype=np.int64)

    def j1_block(self, t: int) -> np.ndarray:
        """Dense J1 rows of tree ``t`` over its own (z, w^(t)) columns."""
        b = self.blocks[t]
        M = np.zeros((len(b.rows), b.n_vars))
        nz = len(b.tree)
        for r, row in enumerate(b.rows):
            zs, a = b.row_members(row)
            M[r, zs] = 1.0
            if a is not None:
                M[r, nz + a] = 1.0
        return M

    def block_labels(self, t: int) -> list[str]:
        b = self.blocks[t]
        return [f"z_{h}" for h in range(len(b.tree))] + [f"w({t})_{a.k},{a.i}" for a in b.attachments]

    def split(self, x: np.ndarray):
        """Slice a full-space vector into (z per tree, w^(t) per tree, w, s)."""
        z = [x[b.z_offset : b.z_offset + len(b.tree)] for b in self.blocks]
        wt = [x[b.wt_offset : b.wt_offset + len(b.attachments)] for b in self.blocks]
        return z, wt, x[self.w_offset : self.s_offset], x[self.s_offset :]


def build_ip3(ens: Ensemble, prof: RoutingProfile, lam: float, errors: Sequence[np.ndarray] | None = None) -> PruningProblem:
    """Build the ensemble pruning program for trade-off ``lam``.

    ``errors`` defaults to the per-node error counts stored on the trees,
    which must have been computed on the same data as ``prof``.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if len(prof.trees) != ens.n_trees:
        raise ModelDataMismatch(f"profile covers {len(prof.trees)} trees, ensemble has {ens.n_trees}")
    if errors is None:
        errors = [tree.errors for tree in ens.trees]
    N = prof.n_examples
    blocks = []
    offset = 0
    for t, (tree, routing) in enumerate(zip(ens.trees, prof.trees)):
        e = np.asarray(errors[t], dtype=float)
        if e.shape != (len(tree),):
            raise ModelDataMismatch(f"tree {t}: {e.shape} error entries for {len(tree)} nodes")
        if routing.leaf.shape[0] != N or any(not tree.nodes[int(l)].is_leaf for l in np.unique(routing.leaf)):
            raise ModelDataMismatch(f"tree {t}: routing profile does not match the tree")
        atts = tuple(Attachment(i, k, u) for i in range(N) for k, u in routing.attachments(i))
        rows = _dfs_rows(tree, atts)
        blocks.append(TreeBlock(t, tree, e, atts, rows, offset, offset + len(tree)))
        offset += len(tree) + len(atts)

    groups: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for b in blocks:
        for a, att in enumerate(b.attachments):
            groups.setdefault((att.i, att.k), []).append((b.t, a))
    w_keys = tuple(sorted(groups))
    j2 = tuple((t, a, g) for g, key in enumerate(w_keys) for t, a in sorted(groups[key]))
    return PruningProblem(tuple(blocks), w_keys, j2, float(lam), N, np.asarray(ens.feature_costs, dtype=float))


# ---------------------------------------------------------------------------
# network form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkForm:
    """Telescoped J1 block of one tree.

    Row 0 is ``-r_1``, row j is ``r_j - r_{j+1}``, the last row is ``r_m``;
    right-hand side becomes (-1, 0, ..., 0, 1).
    """

    t: int
    original: np.ndarray
    transformed: np.ndarray
    rhs: np.ndarray
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]

    def is_network(self) -> bool:
        M = self.transformed
        if not np.all(np.isin(M, (-1.0, 0.0, 1.0))):
            return False
        return bool(np.all((M == 1).sum(axis=0) == 1) and np.all((M == -1).sum(axis=0) == 1))

    def recover(self) -> np.ndarray:
        """Undo the row operations: r_j is the suffix sum of rows j..m."""
        M = self.transformed[1:]
        return np.cumsum(M[::-1], axis=0)[::-1]


def telescope_matrix(m: int) -> np.ndarray:
    P = np.zeros((m + 1, m))
    P[0, 0] = -1.0
    for j in range(1, m):
        P[j, j - 1] = 1.0
        P[j, j] = -1.0
    P[m, m - 1] = 1.0
    return P


def to_network_form(problem: PruningProblem) -> list[NetworkForm]:
    out = []
    for t in range(problem.n_trees):
        J = problem.j1_block(t)
        m = J.shape[0]
        P = telescope_matrix(m)
        labels = ["-r1"] + [f"r{j}-r{j + 1}" for j in range(1, m)] + [f"r{m}"]
        out.append(
            NetworkForm(
                t=t,
                original=J,
                transformed=P @ J,
                rhs=P @ np.ones(m),
                row_labels=tuple(labels),
                col_labels=tuple(problem.block_labels(t)),
            )
        )
    return out


def format_matrix(M: np.ndarray, row_labels: Sequence[str], col_labels: Sequence[str]) -> str:
    """Dense text grid used for golden-file comparison."""
    cells = [[""] + list(col_labels)] + [
        [rl] + [f"{int(v)}" if float(v).is_integer() else f"{v:g}" for v in row] for rl, row in zip(row_labels, M)
    ]
    widths = [max(len(r[j]) for r in cells) for j in range(len(cells[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


# ---------------------------------------------------------------------------
# size report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SizeReport:
    n_z: int
    n_wt: int
    n_w: int
    n_leaf_rows: int
    n_w_rows: int
    n_j2: int
    n_trees: int
    n_examples: int
    n_features: int
    max_nodes: int
    max_leaves: int
    k_max: int

    @property
    def n_vars(self) -> int:
        return self.n_z + self.n_wt + self.n_w

    @property
    def n_constraints(self) -> int:
        return self.n_leaf_rows + self.n_w_rows + self.n_j2

    @property
    def bounds(self) -> dict[str, int]:
        T, N, K, km = self.n_trees, self.n_examples, self.n_features, self.k_max
        return {
            "n_z": T * self.max_nodes,
            "n_wt": N * T * km,
            "n_w": N * min(T * km, K),
            "n_leaf_rows": T * self.max_leaves,
            "n_w_rows": N * T * km,
            "n_j2": N * T * km,
            "n_vars": T * self.max_nodes + N * T * km + N * min(T * km, K),
            "n_constraints": T * self.max_leaves + 2 * N * T * km,
        }

    def within_bounds(self) -> bool:
        return all(getattr(self, name) <= bound for name, bound in self.bounds.items())

    def lines(self) -> list[str]:
        out = []
        for name, bound in self.bounds.items():
            out.append(f"{name:>14s} {getattr(self, name):>10d}  (bound {bound})")
        return out


def size_report(ens: Ensemble, prof: RoutingProfile) -> SizeReport:
    N = prof.n_examples
    n_wt = 0
    k_max = 0
    n_w = 0
    for i in range(N):
        union: set[int] = set()
        for routing in prof.trees:
            feats = routing.features(i)
            n_wt += len(feats)
            k_max = max(k_max, len(feats))
            union |= feats
        n_w += len(union)
    return SizeReport(
        n_z=sum(len(t) for t in ens.trees),
        n_wt=n_wt,
        n_w=n_w,
        n_leaf_rows=sum(len(t.leaves) for t in ens.trees),
        n_w_rows=n_wt,
        n_j2=n_wt,
        n_trees=ens.n_trees,
        n_examples=N,
        n_features=ens.n_features,
        max_nodes=max(len(t) for t in ens.trees),
        max_leaves=max(len(t.leaves) for t in ens.trees),
        k_max=k_max,
    )


# ---------------------------------------------------------------------------
# the naive single-tree formulation, kept only to exhibit its fractional vertex
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NaiveTreeConstraints:
    """``A_eq v = b_eq``, ``A_ge v >= b_ge``, ``0 <= v <= 1`` over v = (z, w)."""

    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ge: np.ndarray
    b_ge: np.ndarray
    w_keys: tuple[tuple[int, int], ...]

    def satisfied(self, v, tol: float = 1e-12) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(
            np.all(np.abs(self.A_eq @ v - self.b_eq) <= tol)
            and np.all(self.A_ge @ v - self.b_ge >= -tol)
            and np.all(v >= -tol)
            and np.all(v <= 1 + tol)
        )


def naive_constraints(tree: Tree, prof: RoutingProfile, t: int = 0) -> NaiveTreeConstraints:
    """Leaf rows plus ``w_{k,i} >= z_h`` for every h reached by i below a k-split."""
    routing = prof.trees[t]
    n = len(tree)
    w_keys = tuple(sorted({(i, k) for i in range(prof.n_examples) for k in routing.features(i)}))
    col = {key: n + j for j, key in enumerate(w_keys)}
    eq = []
    for h in tree.leaves:
        row = np.zeros(n + len(w_keys))
        row[tree.predecessors(h) + [h]] = 1.0
        eq.append(row)
    ge = []
    for i in range(prof.n_examples):
        path = tree.predecessors(int(routing.leaf[i])) + [int(routing.leaf[i])]
        for depth, h in enumerate(path):
            above = {tree.nodes[u].feature for u in path[:depth]}
            for k in sorted(above):
                row = np.zeros(n + len(w_keys))
                row[col[(i, k)]] = 1.0
                row[h] = -1.0
                ge.append(row)
    A_ge = np.array(ge) if ge else np.zeros((0, n + len(w_keys)))
    return NaiveTreeConstraints(np.array(eq), np.ones(len(eq)), A_ge, np.zeros(len(ge)), w_keys)
