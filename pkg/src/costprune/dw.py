"""Dantzig-Wolfe column generation for the pruning LP.

The master keeps, per tree, a convex combination of valid prunings (extreme
points of the tree's J1 polytope) plus the global usage columns w_{k,i} and
the linking slacks. Linking rows read ``sum_j alpha_j w^(t)_j - w + s = 0``,
so their duals ``q`` are <= 0 at optimality and a pruning pays ``-q`` for
every first-use node it keeps internal.

Pricing one tree is a bottom-up dynamic program over its nodes::

    f(h) = min( e_h / (N T),  sum_c f(c) + sum_{attachments at h} (-q) )

which is exact because the tree polytope's vertices are exactly the valid
prunings. Subproblems share no state and run on a thread pool; results are
merged in tree order.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import SolverError
from .problem import Attachment, PruningProblem
from .simplex import OPTIMAL, LPSolution, StandardLP, Tolerances, warm_start_solve
from .forest import Tree

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreePolytopeSpec:
    t: int
    tree: Tree
    leaf_cost: np.ndarray  # e_h / (N T) per node
    attachments: tuple[Attachment, ...]
    at_node: tuple[tuple[int, ...], ...]  # local attachment ids whose first-use node is h
    internal_below: np.ndarray
    tie_weight: float = 1.0  # secondary cost per pruned internal node

    @classmethod
    def from_problem(cls, problem: PruningProblem, t: int) -> "TreePolytopeSpec":
        b = problem.blocks[t]
        at_node: list[list[int]] = [[] for _ in range(len(b.tree))]
        for a, att in enumerate(b.attachments):
            at_node[att.u].append(a)
        return cls(
            t=t,
            tree=b.tree,
            leaf_cost=b.errors / (problem.n_examples * problem.n_trees),
            attachments=b.attachments,
            at_node=tuple(tuple(v) for v in at_node),
            internal_below=b.tree.n_internal_below().astype(float),
            tie_weight=problem.n_w + 1.0,
        )

    @classmethod
    def from_tree(cls, tree: Tree, errors, attachments: Sequence[Attachment], n_examples: int, n_trees: int = 1, t: int = 0):
        at_node: list[list[int]] = [[] for _ in range(len(tree))]
        for a, att in enumerate(attachments):
            at_node[att.u].append(a)
        return cls(
            t=t,
            tree=tree,
            leaf_cost=np.asarray(errors, dtype=float) / (n_examples * n_trees),
            attachments=tuple(attachments),
            at_node=tuple(tuple(v) for v in at_node),
            internal_below=tree.n_internal_below().astype(float),
        )


@dataclass(frozen=True)
class Column:
    t: int
    leaves: frozenset[int]
    wt: np.ndarray  # induced w^(t) per local attachment
    cost: float
    secondary: float

    def z(self, n_nodes: int) -> np.ndarray:
        v = np.zeros(n_nodes)
        v[list(self.leaves)] = 1.0
        return v


def internal_nodes(tree: Tree, leaves) -> set[int]:
    out: set[int] = set()
    for h in leaves:
        out.update(tree.predecessors(h))
    return out


def make_column(spec: TreePolytopeSpec, leaves) -> Column:
    """Column for a pruning given by its leaf set; w^(t) follows the first-use rule."""
    leaves = frozenset(int(h) for h in leaves)
    kept = internal_nodes(spec.tree, leaves)
    wt = np.array([1.0 if att.u in kept else 0.0 for att in spec.attachments])
    cost = float(sum(spec.leaf_cost[h] for h in leaves))
    secondary = float(spec.tie_weight * sum(spec.internal_below[h] for h in leaves))
    return Column(spec.t, leaves, wt, cost, secondary)


def _collect_leaves(tree: Tree, as_leaf: np.ndarray) -> frozenset[int]:
    leaves = []
    stack = [0]
    while stack:
        h = stack.pop()
        if as_leaf[h]:
            leaves.append(h)
        else:
            stack.extend(tree.nodes[h].children)
    return frozenset(leaves)


def subproblem_solve(spec: TreePolytopeSpec, q: np.ndarray, prefer_larger: bool = False, tie_tol: float = 0.0) -> tuple[Column, float]:
    """Cheapest pruning under per-attachment charges ``-q``.

    Ties go to the smaller pruning unless ``prefer_larger``; ``tie_tol``
    widens what counts as a tie.
    """
    tree = spec.tree
    n = len(tree)
    f = np.zeros(n)
    as_leaf = np.zeros(n, dtype=bool)
    for h in range(n - 1, -1, -1):
        node = tree.nodes[h]
        leaf_val = spec.leaf_cost[h]
        if node.is_leaf:
            f[h] = leaf_val
            as_leaf[h] = True
            continue
        split_val = sum(f[c] for c in node.children) - sum(q[a] for a in spec.at_node[h])
        if prefer_larger:
            keep_leaf = leaf_val < split_val - tie_tol
        else:
            keep_leaf = leaf_val <= split_val + tie_tol
        as_leaf[h] = keep_leaf
        f[h] = leaf_val if keep_leaf else split_val
    col = make_column(spec, _collect_leaves(tree, as_leaf))
    return col, float(f[0])


def subproblem_solve_lex(spec: TreePolytopeSpec, q1: np.ndarray, q2: np.ndarray, tol: float) -> tuple[Column, float, float]:
    """Lexicographic pricing: minimise the primary reduced cost, then the secondary.

    Primary leaf value is e_h/(NT) with charges ``-q1``; secondary leaf value
    is ``tie_weight * internal_below[h]`` with charges ``-q2``. Lexicographic
    order is compatible with addition, so the same bottom-up recursion is
    exact.
    """
    tree = spec.tree
    weight = spec.tie_weight
    n = len(tree)
    f1 = np.zeros(n)
    f2 = np.zeros(n)
    as_leaf = np.zeros(n, dtype=bool)
    for h in range(n - 1, -1, -1):
        node = tree.nodes[h]
        l1, l2 = spec.leaf_cost[h], weight * spec.internal_below[h]
        if node.is_leaf:
            f1[h], f2[h], as_leaf[h] = l1, l2, True
            continue
        s1 = sum(f1[c] for c in node.children) - sum(q1[a] for a in spec.at_node[h])
        s2 = sum(f2[c] for c in node.children) - sum(q2[a] for a in spec.at_node[h])
        if s1 < l1 - tol or (s1 <= l1 + tol and s2 < l2):
            f1[h], f2[h] = s1, s2
        else:
            f1[h], f2[h], as_leaf[h] = l1, l2, True
    col = make_column(spec, _collect_leaves(tree, as_leaf))
    return col, float(f1[0]), float(f2[0])


# ---------------------------------------------------------------------------
# master
# ---------------------------------------------------------------------------

@dataclass
class MasterState:
    problem: PruningProblem
    columns: list[Column]
    basis: np.ndarray | None = None
    q: np.ndarray | None = None
    r: np.ndarray | None = None
    objective: float = float("inf")
    solution: LPSolution | None = None
    j2_row: dict = field(default_factory=dict)  # (t, local attachment) -> linking row

    @property
    def n_fixed(self) -> int:
        return len(self.problem.j2) + self.problem.n_w

    @property
    def n_rows(self) -> int:
        return len(self.problem.j2) + self.problem.n_trees

    def fixed_costs(self) -> np.ndarray:
        p = self.problem
        c = np.zeros(self.n_fixed)
        c[len(p.j2):] = [p.lam * p.feature_costs[k] / p.n_examples for _, k in p.w_keys]
        return c

    def fixed_matrix(self) -> sp.csc_matrix:
        p = self.problem
        nj = len(p.j2)
        rows = list(range(nj)) + list(range(nj))
        cols = list(range(nj)) + [nj + g for _, _, g in p.j2]
        vals = [1.0] * nj + [-1.0] * nj
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.n_rows, self.n_fixed))

    def column_matrix(self, cols: Sequence[Column]) -> sp.csc_matrix:
        nj = len(self.problem.j2)
        rows, idx, vals = [], [], []
        for j, col in enumerate(cols):
            for a in np.flatnonzero(col.wt):
                rows.append(self.j2_row[(col.t, int(a))]); idx.append(j); vals.append(1.0)
            rows.append(nj + col.t); idx.append(j); vals.append(1.0)
        return sp.csc_matrix((vals, (rows, idx)), shape=(self.n_rows, len(cols)))

    def master_lp(self, select: np.ndarray | None = None, costs: np.ndarray | None = None) -> StandardLP:
        A = sp.hstack([self.fixed_matrix(), self.column_matrix(self.columns)], format="csc")
        if costs is None:
            costs = np.concatenate([self.fixed_costs(), [c.cost for c in self.columns]])
        b = np.concatenate([np.zeros(len(self.problem.j2)), np.ones(self.problem.n_trees)])
        if select is not None:
            A = A[:, select]
            costs = costs[select]
        return StandardLP(A, b, costs)


def initialize_master(problem: PruningProblem, specs: Sequence[TreePolytopeSpec] | None = None) -> MasterState:
    """Root-only column per tree; basis = linking slacks + those columns."""
    if specs is None:
        specs = [TreePolytopeSpec.from_problem(problem, t) for t in range(problem.n_trees)]
    state = MasterState(problem, [])
    state.j2_row = {(t, a): j for j, (t, a, _) in enumerate(problem.j2)}
    state.columns = [make_column(spec, [0]) for spec in specs]
    nj = len(problem.j2)
    state.basis = np.concatenate([np.arange(nj), state.n_fixed + np.arange(problem.n_trees)])
    _solve_master(state)
    return state


def _solve_master(state: MasterState, tol: Tolerances = Tolerances()) -> None:
    lp = state.master_lp()
    sol = warm_start_solve(lp, state.basis, tol)
    if not sol.optimal:
        raise SolverError(f"restricted master ended {sol.status}")
    nj = len(state.problem.j2)
    state.solution = sol
    state.basis = sol.basis
    state.q = sol.y[:nj]
    state.r = sol.y[nj:]
    state.objective = sol.objective


def _tree_duals(state: MasterState, spec: TreePolytopeSpec, q: np.ndarray) -> np.ndarray:
    return np.array([q[state.j2_row[(spec.t, a)]] for a in range(len(spec.attachments))])


@dataclass
class PricingResult:
    columns: list[Column]
    opt: np.ndarray  # OPT_t per tree
    violation: float  # most negative reduced cost over all master candidates (<= 0)
    w_reduced: np.ndarray
    s_reduced: np.ndarray

    @property
    def lower_bound_shift(self) -> float:
        return float(np.minimum(self.opt_gap, 0.0).sum())

    opt_gap: np.ndarray = field(default_factory=lambda: np.zeros(0))


def price_and_generate(state: MasterState, specs: Sequence[TreePolytopeSpec], tol: Tolerances = Tolerances(), pool: ThreadPoolExecutor | None = None) -> PricingResult:
    """Columns whose reduced cost ``OPT_t - r_t`` is below ``-opt_tol``."""
    p = state.problem
    duals = [_tree_duals(state, spec, state.q) for spec in specs]

    def work(args):
        spec, qt = args
        return subproblem_solve(spec, qt)

    results = list(pool.map(work, zip(specs, duals))) if pool is not None else [work(a) for a in zip(specs, duals)]
    opt = np.array([v for _, v in results])
    gap = opt - state.r
    entering = [col for (col, _), g in zip(results, gap) if g < -tol.opt_tol]

    # the fixed columns are already in the master, so these are >= -tol at a
    # master optimum; they are reported for completeness
    nj = len(p.j2)
    s_red = -state.q
    w_red = state.fixed_costs()[nj:].copy()
    for j, (_, _, g) in enumerate(p.j2):
        w_red[g] += state.q[j]
    violation = float(min(0.0, gap.min(initial=0.0), s_red.min(initial=0.0), w_red.min(initial=0.0)))
    return PricingResult(entering, opt, violation, w_red, s_red, opt_gap=gap)


@dataclass(frozen=True)
class DWOptions:
    max_rounds: int = 10_000
    threads: int | None = None
    canonical: bool = True
    tol: Tolerances = Tolerances()
    trace_path: str | None = None


@dataclass
class DWResult:
    status: str
    solution: LPSolution  # full-space (z, w^(t), w, s); y is None
    objective: float
    lower_bound: float
    rounds: int
    columns: list[Column]
    alphas: np.ndarray
    q: np.ndarray
    r: np.ndarray
    trace: list[tuple[int, float, int, float]]

    @property
    def gap(self) -> float:
        return self.objective - self.lower_bound

    def selected(self, n_trees: int, tol: float = 1e-9) -> list[list[tuple[float, Column]]]:
        out: list[list[tuple[float, Column]]] = [[] for _ in range(n_trees)]
        for a, col in zip(self.alphas, self.columns):
            if a > tol:
                out[col.t].append((float(a), col))
        return out


def _recover(problem: PruningProblem, state: MasterState, x_master: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nf = state.n_fixed
    nj = len(problem.j2)
    alphas = x_master[nf:]
    x = np.zeros(problem.n_vars)
    for a, col in zip(alphas, state.columns):
        if a == 0:
            continue
        b = problem.blocks[col.t]
        x[b.z_offset : b.z_offset + len(b.tree)] += a * col.z(len(b.tree))
        x[b.wt_offset : b.wt_offset + len(b.attachments)] += a * col.wt
    x[problem.w_offset : problem.s_offset] = x_master[nj:nf]
    x[problem.s_offset :] = x_master[:nj]
    return x, alphas


def solve_dw(problem: PruningProblem, opts: DWOptions = DWOptions()) -> DWResult:
    tol = opts.tol
    specs = [TreePolytopeSpec.from_problem(problem, t) for t in range(problem.n_trees)]
    threads = opts.threads if opts.threads is not None else (os.cpu_count() or 1)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    trace: list[tuple[int, float, int, float]] = []
    try:
        state = initialize_master(problem, specs)
        status = "iteration_limit"
        lower = -np.inf
        rounds = 0
        seen = {(c.t, c.leaves) for c in state.columns}
        while rounds < opts.max_rounds:
            pr = price_and_generate(state, specs, tol, pool)
            lower = max(lower, state.objective + float(np.minimum(pr.opt_gap, 0.0).sum()))
            trace.append((rounds, state.objective, len(state.columns), pr.violation))
            fresh = [c for c in pr.columns if (c.t, c.leaves) not in seen]
            if not fresh:
                status = OPTIMAL
                lower = state.objective
                break
            for c in fresh:
                seen.add((c.t, c.leaves))
            state.columns.extend(fresh)
            _solve_master(state, tol)
            rounds += 1
        objective = state.objective
        x_master = state.solution.x
        if status == OPTIMAL and opts.canonical:
            x_master, extra = _canonical_stage(state, specs, tol, pool, seen, opts.max_rounds - rounds)
            rounds += extra
            trace.append((rounds, objective, len(state.columns), 0.0))
    finally:
        if pool is not None:
            pool.shutdown()

    x, alphas = _recover(problem, state, x_master)
    c = problem.objective()
    obj = float(c @ x)
    sol = LPSolution(status=status, x=x, y=None, objective=obj, iterations=rounds)
    if opts.trace_path:
        write_trace(trace, opts.trace_path)
    return DWResult(status, sol, obj, float(lower), rounds, list(state.columns), alphas, state.q, state.r, trace)


def _canonical_stage(state: MasterState, specs, tol: Tolerances, pool, seen, budget: int) -> tuple[np.ndarray, int]:
    """Among master optima pick the largest pruning with minimal w.

    Mirrors ``simplex.solve_lexicographic``: columns with positive stage-one
    reduced cost are barred, then the secondary cost is minimised with
    lexicographic pricing so only stage-one-optimal prunings can enter.
    """
    p = state.problem
    nj = len(p.j2)
    nf = state.n_fixed
    q1, r1 = state.q.copy(), state.r.copy()
    q1_tree = [_tree_duals(state, spec, q1) for spec in specs]

    fixed_rc = np.concatenate([-q1, state.fixed_costs()[nj:]])
    for j, (_, _, g) in enumerate(p.j2):
        fixed_rc[nj + g] += q1[j]
    fixed_ok = fixed_rc <= tol.fix_tol

    def column_rc(col: Column) -> float:
        return col.cost - float(q1_tree[col.t] @ col.wt) - r1[col.t]

    def secondary_costs():
        return np.concatenate([np.zeros(nj), np.ones(p.n_w), [c.secondary for c in state.columns]])

    basis = state.basis.copy()
    rounds = 0
    while True:
        col_ok = np.array([column_rc(c) <= tol.fix_tol for c in state.columns], dtype=bool)
        select = np.flatnonzero(np.concatenate([fixed_ok, col_ok]))
        lp = state.master_lp(select=select, costs=secondary_costs())
        pos = {int(j): i for i, j in enumerate(select)}
        if not all(int(j) in pos for j in basis):
            raise SolverError("stage-one basis left the optimal face")
        sol = warm_start_solve(lp, [pos[int(j)] for j in basis], tol)
        if not sol.optimal:
            raise SolverError(f"canonical master stage ended {sol.status}")
        basis = select[sol.basis]
        q2, r2 = sol.y[:nj], sol.y[nj:]
        if rounds >= budget:
            break

        def work(spec):
            return subproblem_solve_lex(spec, q1_tree[spec.t], _tree_duals(state, spec, q2), tol.fix_tol)

        results = list(pool.map(work, specs)) if pool is not None else [work(s) for s in specs]
        fresh = []
        for spec, (col, v1, v2) in zip(specs, results):
            if v1 - r1[spec.t] <= tol.fix_tol and v2 - r2[spec.t] < -tol.opt_tol and (col.t, col.leaves) not in seen:
                fresh.append(col)
        if not fresh:
            break
        for c in fresh:
            seen.add((c.t, c.leaves))
        state.columns.extend(fresh)
        rounds += 1
    x_master = np.zeros(nf + len(state.columns))
    x_master[select] = sol.x
    state.basis = basis
    return x_master, rounds


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "master_objective", "n_columns", "max_violation"])
        for it, obj, ncol, viol in trace:
            w.writerow([it, repr(float(obj)), ncol, repr(float(viol))])
