"""Pruning orchestration: lambda and budget solves, the per-tree baseline,
evaluation of pruned ensembles, and trade-off sweeps.

Solvers return a vertex of the LP relaxation, which is 0/1 for this program;
every solve is audited for that and the extracted prunings are re-derived
from scratch to make sure the solver's w's are the ones the leaf sets imply.
Among equally good prunings the largest one is returned (optimal prunings
are closed under union), so results do not depend on the solve path.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .dw import DWOptions, TreePolytopeSpec, make_column, solve_dw, subproblem_solve
from .errors import IntegralityError, ModelDataMismatch, SolverError
from .forest import (
    Dataset,
    Ensemble,
    RoutingProfile,
    Tree,
    TreeNode,
    compute_routing_profile,
    finalize_tree,
    leaf_of,
    with_stats,
)
from .oracle import is_valid_pruning
from .problem import PruningProblem, build_ip3
from .simplex import Tolerances, solve_lexicographic

log = logging.getLogger(__name__)

INTEGRALITY_TOL = 1e-6
SOLVERS = ("direct", "dw")


@dataclass(frozen=True)
class PrunedEnsemble:
    source: Ensemble
    leaves: tuple[frozenset[int], ...]
    lam: float
    error_term: float
    cost_term: float  # expected train feature cost, sum_k c_k (1/N) sum_i w_{k,i}

    @property
    def objective(self) -> float:
        return self.error_term + self.lam * self.cost_term

    def internal(self, t: int) -> set[int]:
        tree = self.source.trees[t]
        out: set[int] = set()
        for h in self.leaves[t]:
            out.update(tree.predecessors(h))
        return out

    def stop_mask(self, t: int) -> np.ndarray:
        mask = np.zeros(len(self.source.trees[t]), dtype=bool)
        mask[list(self.leaves[t])] = True
        return mask

    def is_valid(self) -> bool:
        return all(is_valid_pruning(tree, l) for tree, l in zip(self.source.trees, self.leaves))

    def n_leaves(self) -> list[int]:
        return [len(l) for l in self.leaves]

    def to_ensemble(self) -> tuple[Ensemble, list[list[int]]]:
        """Materialise the pruned trees with fresh preorder ids.

        The second value maps new ids to source ids, per tree.
        """
        trees, id_maps = [], []
        for t, tree in enumerate(self.source.trees):
            leaves = self.leaves[t]
            kept = sorted(self.internal(t) | set(leaves))
            new_id = {old: j for j, old in enumerate(kept)}
            nodes = []
            for old in kept:
                n = tree.nodes[old]
                if old in leaves:
                    nodes.append(TreeNode(id=new_id[old], class_counts=n.class_counts))
                else:
                    nodes.append(
                        TreeNode(
                            id=new_id[old],
                            feature=n.feature,
                            thresholds=n.thresholds,
                            children=tuple(new_id[c] for c in n.children),
                            class_counts=n.class_counts,
                        )
                    )
            trees.append(finalize_tree(nodes, self.source.n_classes))
            id_maps.append(kept)
        return self.source.with_trees(trees), id_maps


@dataclass(frozen=True)
class TradeoffPoint:
    lam: float
    train_cost: float
    train_error_term: float
    objective: float
    test_cost: float = math.nan
    test_error: float = math.nan
    budget: float | None = None


CURVE_COLUMNS = ("lambda", "train_cost", "train_error_term", "objective", "test_cost", "test_error")


@dataclass
class TradeoffCurve:
    points: list[TradeoffPoint] = field(default_factory=list)
    pruned: list[PrunedEnsemble] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.points)

    def monotonicity_violations(self, tol: float = 1e-12) -> list[str]:
        bad = []
        for a, b in zip(self.points, self.points[1:]):
            if b.lam < a.lam:
                bad.append(f"lambda decreases from {a.lam!r} to {b.lam!r}")
            if b.train_cost > a.train_cost + tol:
                bad.append(f"train cost rises from {a.train_cost!r} to {b.train_cost!r} at lambda={b.lam!r}")
            if b.train_error_term < a.train_error_term - tol:
                bad.append(f"train error term drops from {a.train_error_term!r} to {b.train_error_term!r} at lambda={b.lam!r}")
        return bad

    def nearest_error(self, target: float, column: str = "test_error") -> TradeoffPoint:
        """Point whose error is closest to ``target``; ties go to the lower cost."""
        if not self.points:
            raise ValueError("empty curve")
        cost_col = "test_cost" if column == "test_error" else "train_cost"
        return min(self.points, key=lambda p: (abs(getattr(p, column) - target), getattr(p, cost_col)))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for p in self.points:
            w.writerow([_fmt(v) for v in (p.lam, p.train_cost, p.train_error_term, p.objective, p.test_cost, p.test_error)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _ancestor_features(tree: Tree, n_features: int) -> np.ndarray:
    """Boolean (nodes x K): features split on strictly above each node."""
    out = np.zeros((len(tree), n_features), dtype=bool)
    for h in range(1, len(tree)):
        p = int(tree.parent[h])
        out[h] = out[p]
        out[h, tree.nodes[p].feature] = True
    return out


def _leaf_distributions(tree: Tree, n_classes: int) -> np.ndarray:
    dist = np.zeros((len(tree), n_classes))
    for node in tree.nodes:
        total = sum(node.class_counts)
        if total:
            dist[node.id] = np.asarray(node.class_counts, dtype=float) / total
        else:
            dist[node.id, node.pred] = 1.0
    return dist


@dataclass(frozen=True)
class Evaluation:
    avg_cost: float
    error: float
    predictions: np.ndarray
    features_used: np.ndarray  # bool (N x K)


def evaluate(pruned: PrunedEnsemble, data: Dataset, hard_vote: bool = False) -> Evaluation:
    """Average shared feature cost and ensemble error on ``data``.

    Prediction averages the normalised class distributions of the reached
    leaves (or takes a majority of leaf labels with ``hard_vote``); ties go
    to the lowest class index.
    """
    ens = pruned.source
    K = ens.n_features
    if data.n_features < K:
        raise ModelDataMismatch(f"data has {data.n_features} features, ensemble expects {K}")
    M = ens.n_classes
    N = data.n_examples
    used = np.zeros((N, K), dtype=bool)
    votes = np.zeros((N, M))
    for t, tree in enumerate(ens.trees):
        ends = leaf_of(tree, data.X, pruned.stop_mask(t))
        used |= _ancestor_features(tree, K)[ends]
        if hard_vote:
            preds = np.array([tree.nodes[h].pred for h in range(len(tree))])[ends]
            votes[np.arange(N), preds] += 1.0
        else:
            votes += _leaf_distributions(tree, M)[ends]
    pred = np.argmax(votes / ens.n_trees, axis=1)
    cost = used @ np.asarray(ens.feature_costs, dtype=float)
    return Evaluation(float(cost.mean()), float(np.mean(pred != data.y)), pred, used)


def make_pruned(ens: Ensemble, data: Dataset, leaves: Sequence[Iterable[int]], lam: float) -> PrunedEnsemble:
    """Pruned ensemble with the shared-cost objective evaluated on ``data``."""
    leaves = tuple(frozenset(int(h) for h in l) for l in leaves)
    N, T = data.n_examples, ens.n_trees
    err = sum(float(tree.errors[sorted(l)].sum()) for tree, l in zip(ens.trees, leaves)) / (N * T)
    probe = PrunedEnsemble(ens, leaves, float(lam), err, 0.0)
    cost = evaluate(probe, data).avg_cost
    return replace(probe, cost_term=cost)


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

def integrality_gap(x: np.ndarray) -> float:
    return float(np.max(np.abs(x - np.round(x)), initial=0.0))


def extract(problem: PruningProblem, x: np.ndarray, tol: float = INTEGRALITY_TOL) -> list[frozenset[int]]:
    """Leaf sets from a 0/1 solution, after auditing it.

    Raises ``IntegralityError`` if any coordinate is further than ``tol``
    from {0, 1} and ``SolverError`` if the leaf sets are not valid prunings or
    the solver's w's disagree with the ones they imply.
    """
    gap = integrality_gap(x)
    if gap > tol or np.any(x < -tol) or np.any(x > 1 + tol):
        j = int(np.argmax(np.abs(x - np.round(x))))
        name = problem.variable_names()[j]
        raise IntegralityError(
            f"LP optimum is not 0/1 ({name} = {x[j]!r}, distance {gap:.3g}); the relaxation has only "
            "integral vertices, so the solver returned a non-vertex or the problem is corrupt"
        )
    xr = np.round(x)
    z, wt, w, _ = problem.split(xr)

    out = []
    w_check = np.zeros(problem.n_w)
    g_of = {key: g for g, key in enumerate(problem.w_keys)}
    for t, b in enumerate(problem.blocks):
        leaves = frozenset(int(h) for h in np.flatnonzero(z[t]))
        if not is_valid_pruning(b.tree, leaves):
            raise SolverError(f"tree {t}: leaf set {sorted(leaves)} is not a valid pruning")
        spec = TreePolytopeSpec.from_tree(b.tree, b.errors, b.attachments, problem.n_examples, problem.n_trees, t)
        implied = make_column(spec, leaves).wt
        if not np.array_equal(implied, wt[t]):
            raise SolverError(f"tree {t}: solver feature-use indicators disagree with the pruning")
        for a, att in enumerate(b.attachments):
            if implied[a]:
                w_check[g_of[(att.i, att.k)]] = 1.0
        out.append(leaves)
    if not np.array_equal(w_check, w):
        raise SolverError("ensemble feature-use indicators disagree with the pruned trees")
    return out


@dataclass
class SolveInfo:
    solver: str
    objective: float
    iterations: int
    integrality_gap: float
    warm_started: bool = False
    rounds: int = 0


class EnsemblePruner:
    """Holds the routing and program for one (ensemble, train set) pair.

    The ensemble's node statistics are recomputed on ``train``. Successive
    direct solves warm-start from the previous optimal basis.
    """

    def __init__(
        self,
        ens: Ensemble,
        train: Dataset,
        solver: str = "direct",
        threads: int | None = None,
        tol: Tolerances = Tolerances(),
        max_rounds: int = 10_000,
        check_direct: bool = False,
        trace_path=None,
    ):
        if solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {solver!r}")
        if train.n_features < ens.n_features:
            raise ModelDataMismatch(f"data has {train.n_features} features, ensemble expects {ens.n_features}")
        self.ens = with_stats(ens, train)
        self.train = train
        self.solver = solver
        self.threads = threads
        self.tol = tol
        self.max_rounds = max_rounds
        self.check_direct = check_direct
        self.trace_path = trace_path
        self.profile: RoutingProfile = compute_routing_profile(self.ens, train)
        self.base = build_ip3(self.ens, self.profile, 0.0)
        self._basis: np.ndarray | None = None
        self.last_info: SolveInfo | None = None

    def problem(self, lam: float) -> PruningProblem:
        return self.base.with_lambda(lam)

    def _direct(self, problem: PruningProblem):
        basis = self._basis if self._basis is not None else problem.all_leaves_basis()
        sol = solve_lexicographic(
            problem.to_standard_lp(), [problem.objective(), problem.secondary_objective()], basis=basis, tol=self.tol
        )
        if not sol.optimal:
            raise SolverError(f"direct LP solve ended {sol.status} at lambda={problem.lam!r}")
        self._basis = sol.basis
        return sol.x, SolveInfo("direct", sol.objective, sol.iterations, integrality_gap(sol.x), sol.warm_started)

    def _dw(self, problem: PruningProblem):
        res = solve_dw(problem, DWOptions(max_rounds=self.max_rounds, threads=self.threads, tol=self.tol, trace_path=self.trace_path))
        if res.status != "optimal":
            raise SolverError(
                f"column generation stopped ({res.status}) at lambda={problem.lam!r}: "
                f"objective {res.objective!r}, bound {res.lower_bound!r}, gap {res.gap:.3g}"
            )
        x = res.solution.x
        return x, SolveInfo("dw", res.objective, res.rounds, integrality_gap(x), rounds=res.rounds)

    def solve(self, lam: float) -> tuple[PrunedEnsemble, TradeoffPoint]:
        if lam < 0 or not np.isfinite(lam):
            raise ValueError(f"lambda must be finite and nonnegative, got {lam}")
        problem = self.problem(lam)
        x, info = self._dw(problem) if self.solver == "dw" else self._direct(problem)
        leaves = extract(problem, x)
        if self.check_direct and self.solver == "dw":
            xd, dinfo = self._direct(problem)
            if abs(dinfo.objective - info.objective) > 1e-7 or extract(problem, xd) != leaves:
                raise SolverError(
                    f"column generation and direct solve disagree at lambda={lam!r}: "
                    f"{info.objective!r} vs {dinfo.objective!r}"
                )
        self.last_info = info
        pruned = self._pruned(problem, leaves, np.round(x))
        if abs(pruned.objective - info.objective) > 1e-9:
            raise SolverError(f"objective identity fails at lambda={lam!r}: {pruned.objective!r} vs solver {info.objective!r}")
        return pruned, point_of(pruned)

    def _pruned(self, problem: PruningProblem, leaves, xr: np.ndarray) -> PrunedEnsemble:
        N, T = problem.n_examples, problem.n_trees
        err = sum(float(b.errors[sorted(l)].sum()) for b, l in zip(problem.blocks, leaves)) / (N * T)
        w = xr[problem.w_offset : problem.s_offset]
        w_cost = float(sum(problem.feature_costs[k] * w[g] for g, (_, k) in enumerate(problem.w_keys))) / N
        probe = PrunedEnsemble(self.ens, tuple(leaves), float(problem.lam), err, 0.0)
        # report the routed cost so it is bit-identical to evaluate(); the w's must agree with it
        cost = evaluate(probe, self.train).avg_cost
        if abs(cost - w_cost) > 1e-9 * max(1.0, cost):
            raise SolverError(f"feature cost from w ({w_cost!r}) disagrees with routed cost ({cost!r})")
        return replace(probe, cost_term=cost)

    def unpruned(self) -> PrunedEnsemble:
        return make_pruned(self.ens, self.train, [tree.leaves for tree in self.ens.trees], 0.0)

    def lambda_max(self) -> float:
        """A lambda at which keeping only the roots is optimal."""
        costs = np.asarray(self.ens.feature_costs, dtype=float)
        positive = costs[costs > 0]
        if positive.size == 0:
            return 0.0
        root_err = sum(float(tree.errors[0]) for tree in self.ens.trees)
        return 1.0 + root_err / (self.ens.n_trees * float(positive.min()))


def point_of(pruned: PrunedEnsemble, test: Dataset | None = None, budget: float | None = None) -> TradeoffPoint:
    test_cost = test_error = math.nan
    if test is not None:
        ev = evaluate(pruned, test)
        test_cost, test_error = ev.avg_cost, ev.error
    return TradeoffPoint(pruned.lam, pruned.cost_term, pruned.error_term, pruned.objective, test_cost, test_error, budget)


def prune_with_lambda(ens: Ensemble, data: Dataset, lam: float, solver: str = "direct", **kw) -> tuple[PrunedEnsemble, TradeoffPoint]:
    return EnsemblePruner(ens, data, solver, **kw).solve(lam)


@dataclass(frozen=True)
class BudgetResult:
    pruned: PrunedEnsemble
    point: TradeoffPoint
    budget: float
    bracket: tuple[tuple[float, float], tuple[float, float]] | None  # (lam, cost) infeasible side, feasible side
    lower_bound: float  # Lagrangian bound on the least error term achievable within the budget
    evaluations: int

    @property
    def gap(self) -> float:
        return self.pruned.error_term - self.lower_bound


def prune_with_budget(
    ens: Ensemble,
    data: Dataset,
    budget: float,
    solver: str = "direct",
    iterations: int = 60,
    pruner: EnsemblePruner | None = None,
    **kw,
) -> BudgetResult:
    """Bisect on lambda for the cheapest-in-lambda pruning within ``budget``.

    Realised cost is a step function of lambda, so the budget is usually not
    hit exactly; the result carries the bracketing pair of lambdas and the
    Lagrangian bound ``max_lambda f(lambda) - lambda * B``.
    """
    if budget < 0 or not np.isfinite(budget):
        raise ValueError(f"budget must be finite and nonnegative, got {budget}")
    pr = pruner or EnsemblePruner(ens, data, solver, **kw)
    tol = 1e-12
    pruned, _ = pr.solve(0.0)
    lower = pruned.objective
    evals = 1
    if pruned.cost_term <= budget + tol:
        return BudgetResult(pruned, point_of(pruned, budget=budget), budget, None, pruned.error_term, evals)
    lo, lo_cost = 0.0, pruned.cost_term
    hi = pr.lambda_max()
    best, _ = pr.solve(hi)
    evals += 1
    lower = max(lower, best.objective - hi * budget)
    if best.cost_term > budget + tol:
        raise SolverError(f"all-roots lambda {hi!r} still costs {best.cost_term!r} > {budget!r}")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        cand, _ = pr.solve(mid)
        evals += 1
        lower = max(lower, cand.objective - mid * budget)
        if cand.cost_term <= budget + tol:
            hi = mid
            if cand.cost_term >= best.cost_term:
                best = cand
        else:
            lo, lo_cost = mid, cand.cost_term
    return BudgetResult(best, point_of(best, budget=budget), budget, ((lo, lo_cost), (best.lam, best.cost_term)), lower, evals)


def prune_individual(ens: Ensemble, data: Dataset, lam: float, check: bool = True, tol: Tolerances = Tolerances()) -> PrunedEnsemble:
    """Prune each tree on its own, as if it were the whole model.

    Tree t minimises its share of the ensemble objective,
    ``(1/(NT)) sum e_h z_h + lam sum_k c_k (1/N) sum_i w_{k,i}`` with its own
    w's, so that trees reading disjoint features reproduce ensemble pruning.
    Both the LP and the tree recursion are run and must agree. The returned
    objective uses the ensemble's shared-cost accounting.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    full = with_stats(ens, data)
    prof = compute_routing_profile(full, data)
    N, T = data.n_examples, full.n_trees
    leaves = []
    for t, tree in enumerate(full.trees):
        single = full.with_trees([tree])
        # a one-tree program weighs errors by 1/N; scaling lam by T keeps the argmin
        problem = build_ip3(single, RoutingProfile((prof.trees[t],), N), lam * T)
        sol = solve_lexicographic(
            problem.to_standard_lp(), [problem.objective(), problem.secondary_objective()], basis=problem.all_leaves_basis(), tol=tol
        )
        if not sol.optimal:
            raise SolverError(f"tree {t}: LP ended {sol.status}")
        lp_leaves = extract(problem, sol.x)[0]
        if check:
            spec = TreePolytopeSpec.from_problem(problem, 0)
            charges = np.array([-lam * T * full.feature_costs[a.k] / N for a in spec.attachments])
            col, value = subproblem_solve(spec, charges, prefer_larger=True, tie_tol=1e-12)
            if col.leaves != lp_leaves or abs(value - sol.objective) > 1e-9:
                raise SolverError(f"tree {t}: LP and recursion disagree ({sorted(lp_leaves)} vs {sorted(col.leaves)})")
        leaves.append(lp_leaves)
    return make_pruned(full, data, leaves, lam)


def sweep(
    ens: Ensemble,
    train: Dataset,
    test: Dataset | None = None,
    lambdas: Sequence[float] | None = None,
    budgets: Sequence[float] | None = None,
    solver: str = "direct",
    keep_pruned: bool = False,
    **kw,
) -> TradeoffCurve:
    """One point per grid entry, warm-starting along the grid.

    Raises ``SolverError`` naming the offending grid value when a solve fails
    or the curve is not monotone.
    """
    if (lambdas is None) == (budgets is None):
        raise ValueError("give exactly one of lambdas or budgets")
    grid = list(lambdas if lambdas is not None else budgets)
    if not grid:
        raise ValueError("empty grid")
    if lambdas is not None and any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly increasing")
    if budgets is not None and any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("budget grid must be strictly decreasing")
    pr = EnsemblePruner(ens, train, solver, **kw)
    curve = TradeoffCurve()
    for v in grid:
        try:
            if lambdas is not None:
                pruned, _ = pr.solve(v)
                point = point_of(pruned, test)
            else:
                res = prune_with_budget(ens, train, v, pruner=pr)
                pruned = res.pruned
                point = point_of(pruned, test, budget=v)
        except SolverError as exc:
            what = "lambda" if lambdas is not None else "budget"
            raise type(exc)(f"sweep failed at {what}={v!r}: {exc}") from exc
        curve.points.append(point)
        if keep_pruned:
            curve.pruned.append(pruned)
    bad = curve.monotonicity_violations()
    if bad:
        raise SolverError("trade-off curve is not monotone: " + "; ".join(bad))
    return curve
