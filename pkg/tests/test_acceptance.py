"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line."""

import contextlib
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, one_example, two_tree_ensemble
from costprune.cli import main
from costprune.dw import DWOptions, solve_dw
from costprune.forest import Ensemble, compute_routing_profile, with_stats
from costprune.oracle import brute_force_optimum, pruning_objective
from costprune.problem import build_ip3, naive_constraints, size_report, to_network_form
from costprune.prune import (
    EnsemblePruner,
    TradeoffCurve,
    extract,
    integrality_gap,
    make_pruned,
    point_of,
    prune_individual,
    sweep,
)
from costprune.simplex import solve_lexicographic, warm_start_solve
from costprune.synthetic import random_dataset, random_instance, random_tree, shared_feature_instance
from test_problem import TREE1_NETWORK, TREE2_NETWORK

LAMBDAS = (0.0, 0.01, 0.1, 1.0)


@contextlib.contextmanager
def criterion(n, title):
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE[n] = f"[{n:2d}] FAIL  {title}: {exc}".splitlines()[0]
        raise
    ACCEPTANCE[n] = f"[{n:2d}] PASS  {title}" + (f" ({detail['msg']})" if "msg" in detail else "")


def random_problem(rng):
    ens, data = random_instance(
        rng,
        n_trees=int(rng.integers(1, 4)),
        max_depth=int(rng.integers(1, 5)),
        n_examples=int(rng.integers(5, 41)),
        n_features=int(rng.integers(2, 7)),
        n_classes=int(rng.integers(2, 4)),
    )
    return build_ip3(ens, compute_routing_profile(ens, data), 0.0)


def direct_lex(p):
    return solve_lexicographic(p.to_standard_lp(), [p.objective(), p.secondary_objective()], basis=p.all_leaves_basis())


@pytest.fixture(scope="module")
def random_solves():
    """200 random ensembles, each solved at four lambdas by three methods."""
    rng = np.random.default_rng(1001)
    out = []
    start = time.perf_counter()
    for _ in range(200):
        base = random_problem(rng)
        for lam in LAMBDAS:
            p = base.with_lambda(lam)
            plain = warm_start_solve(p.to_standard_lp(), p.all_leaves_basis())
            lex = direct_lex(p)
            dw = solve_dw(p, DWOptions(threads=1))
            out.append((p, plain, lex, dw))
    return out, time.perf_counter() - start


def test_01_integrality(random_solves):
    with criterion(1, "LP optima are integral on 200 random ensembles x 4 lambdas") as d:
        solves, elapsed = random_solves
        worst = 0.0
        for p, plain, lex, dw in solves:
            assert plain.optimal and lex.optimal and dw.status == "optimal"
            worst = max(worst, integrality_gap(plain.x), integrality_gap(lex.x), integrality_gap(dw.solution.x))
        assert len(solves) == 800
        assert worst <= 1e-6, f"max distance from 0/1 is {worst:.3g}"
        assert elapsed < 120, f"took {elapsed:.1f}s"
        d["msg"] = f"max distance {worst:.1e}, {elapsed:.1f}s"


def test_02_oracle_exactness():
    with criterion(2, "direct and DW objectives equal exhaustive search on 60 instances") as d:
        rng = np.random.default_rng(2002)
        start = time.perf_counter()
        worst = 0.0
        n = 0
        while n < 60:
            ens, data = random_instance(rng, n_trees=int(rng.integers(1, 4)), max_depth=3, n_examples=int(rng.integers(5, 21)),
                                        n_features=int(rng.integers(2, 6)))
            lam = float(rng.choice(LAMBDAS))
            best, _ = brute_force_optimum(ens, data, lam)
            p = build_ip3(ens, compute_routing_profile(ens, data), lam)
            lex = direct_lex(p)
            dw = solve_dw(p, DWOptions(threads=1))
            for x, obj in ((lex.x, lex.objective), (dw.solution.x, dw.objective)):
                achieved = pruning_objective(ens, data, extract(p, x), lam)[0]
                worst = max(worst, abs(obj - best), abs(achieved - best))
            n += 1
        elapsed = time.perf_counter() - start
        assert worst <= 1e-7, f"largest deviation {worst:.3g}"
        assert elapsed < 120, f"took {elapsed:.1f}s"
        d["msg"] = f"largest deviation {worst:.1e}, {elapsed:.1f}s"


def test_03_dw_direct_agreement(random_solves):
    with criterion(3, "DW and direct agree in objective and rounded solution") as d:
        solves, _ = random_solves
        worst = 0.0
        for p, _, lex, dw in solves:
            worst = max(worst, abs(dw.objective - lex.objective))
            assert np.array_equal(np.round(dw.solution.x), np.round(lex.x)), f"rounded solutions differ at lambda={p.lam}"
        assert worst <= 1e-7, f"objective gap {worst:.3g}"
        d["msg"] = f"{len(solves)} solves, largest gap {worst:.1e}"


def test_04_network_form():
    with criterion(4, "telescoped blocks match the reference matrices; 100 random trees are network matrices"):
        ens = two_tree_ensemble()
        forms = to_network_form(build_ip3(ens, compute_routing_profile(ens, one_example()), 0.0))
        assert np.array_equal(forms[0].transformed, TREE1_NETWORK)
        assert np.array_equal(forms[1].transformed, TREE2_NETWORK)
        rng = np.random.default_rng(4004)
        for _ in range(100):
            tree = random_tree(rng, int(rng.integers(1, 5)), 4, max_children=int(rng.integers(2, 4)))
            data = random_dataset(rng, 30, 4)
            single = with_stats(Ensemble([tree], np.ones(4), 2), data)
            (form,) = to_network_form(build_ip3(single, compute_routing_profile(single, data), 0.0))
            assert form.is_network()
            assert np.array_equal(form.recover(), form.original)


def test_05_naive_formulation_fails():
    with criterion(5, "fractional point satisfies the naive constraints but not the first-use rows"):
        ens = two_tree_ensemble()
        prof = compute_routing_profile(ens, one_example())
        v = np.array([0, 1, 0.5, 0.5, 0.5, 0.5, 0.5])
        assert naive_constraints(ens.trees[0], prof, 0).satisfied(v)
        block = build_ip3(ens, prof, 0.0).j1_block(0)
        n_leaf_rows = len(ens.trees[0].leaves)
        residual = block @ v - 1.0
        assert np.allclose(residual[:n_leaf_rows], 0.0)
        assert np.any(np.abs(residual[n_leaf_rows:]) > 1e-9)


def test_06_endpoints():
    with criterion(6, "lambda=0 keeps the full ensemble; large lambda keeps only roots"):
        rng = np.random.default_rng(6006)
        for _ in range(20):
            ens, data = random_instance(rng, n_trees=3, max_depth=4, n_examples=40, n_features=6, unit_costs=True)
            full = make_pruned(with_stats(ens, data), data, [t.leaves for t in ens.trees], 0.0)
            top = 1.0 + sum(float(t.errors[0]) for t in ens.trees)
            for solver in ("direct", "dw"):
                pr = EnsemblePruner(ens, data, solver, threads=1)
                pruned, point = pr.solve(0.0)
                assert point.train_error_term == full.error_term and point.train_cost == full.cost_term
                pruned, point = pr.solve(top)
                assert all(l == {0} for l in pruned.leaves) and point.train_cost == 0.0


def test_07_monotone_curves():
    with criterion(7, "train cost and error term are monotone on 50 instances x 20 lambdas") as d:
        rng = np.random.default_rng(7007)
        grid = [0.0] + list(np.logspace(-4, 1, 19))
        for _ in range(50):
            ens, data = random_instance(rng, n_trees=3, max_depth=4, n_examples=40, n_features=6)
            curve = sweep(ens, data, lambdas=grid)
            assert not curve.monotonicity_violations()
        d["msg"] = f"{50 * len(grid)} solves"


def test_08_ensemble_beats_individual():
    with criterion(8, "ensemble pruning vs individual pruning on 24 shared-feature instances") as d:
        rng = np.random.default_rng(8008)
        grid = [0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 0.5]
        worse_objective = 0
        verdicts = {"cheaper": 0, "tied": 0, "more expensive": 0}
        for _ in range(24):
            ens, train, test = shared_feature_instance(rng)
            curve = sweep(ens, train, test, lambdas=grid, keep_pruned=True)
            individual = [prune_individual(ens, train, lam) for lam in grid]
            worse_objective += sum(e.objective > i.objective + 1e-12 for e, i in zip(curve.pruned, individual))
            # match each individual point to the ensemble point of nearest test error
            ind_curve = TradeoffCurve([point_of(p, test) for p in individual])
            diffs = [curve.nearest_error(p.test_error).test_cost - p.test_cost for p in ind_curve.points]
            mean = float(np.mean(diffs))
            verdicts["cheaper" if mean < -1e-12 else "more expensive" if mean > 1e-12 else "tied"] += 1
        report = ", ".join(f"{k} {v}" for k, v in verdicts.items())
        print(f"test cost at matched error, ensemble vs individual: {report}")
        assert worse_objective == 0, f"ensemble objective above individual in {worse_objective} cases"
        assert verdicts["cheaper"] > 12, f"no majority: {report}"
        d["msg"] = report


def test_09_size_bounds():
    with criterion(9, "problem sizes within bounds on 100 ensembles; reference example has 5 and 6 rows"):
        ens = two_tree_ensemble()
        p = build_ip3(ens, compute_routing_profile(ens, one_example()), 0.0)
        assert [len(b.rows) for b in p.blocks] == [5, 6]
        rng = np.random.default_rng(9009)
        for _ in range(100):
            ens, data = random_instance(rng, n_trees=int(rng.integers(1, 6)), max_depth=int(rng.integers(1, 6)),
                                        n_examples=int(rng.integers(1, 60)), n_features=int(rng.integers(1, 8)),
                                        max_children=int(rng.integers(2, 4)))
            rep = size_report(ens, compute_routing_profile(ens, data))
            assert rep.within_bounds(), "\n".join(rep.lines())


def test_10_thread_determinism(tmp_path):
    with criterion(10, "sweep and prune CSVs are byte-identical with 1 and 4 threads"):
        data = random_dataset(np.random.default_rng(10), 80, 5, noise=0.2)
        for name, rows in (("train", slice(0, 50)), ("test", slice(50, 80))):
            with open(tmp_path / f"{name}.csv", "w") as fh:
                for x, y in zip(data.X[rows], data.y[rows]):
                    fh.write(",".join(repr(float(v)) for v in x) + f",{int(y)}\n")
        assert main(["--seed", "7", "train", "--train", str(tmp_path / "train.csv"), "--num-trees", "4",
                     "--max-depth", "4", "-o", str(tmp_path / "ens.json")]) == 0
        common = ["--ensemble", str(tmp_path / "ens.json"), "--train", str(tmp_path / "train.csv"),
                  "--test", str(tmp_path / "test.csv"), "--solver", "dw"]
        outputs = {}
        for threads in ("1", "4"):
            sweep_csv = tmp_path / f"sweep{threads}.csv"
            prune_csv = tmp_path / f"prune{threads}.csv"
            assert main(["--seed", "7", "sweep", *common, "--lambdas", "0,0.001,0.01,0.1,1", "--threads", threads,
                         "-o", str(sweep_csv)]) == 0
            assert main(["--seed", "7", "prune", *common, "--lambda", "0.02", "--threads", threads,
                         "--metrics", str(prune_csv)]) == 0
            outputs[threads] = (sweep_csv.read_bytes(), prune_csv.read_bytes())
        assert outputs["1"] == outputs["4"]
        costs = [float(line.split(",")[1]) for line in outputs["1"][0].decode().splitlines()[1:]]
        assert costs[0] > 0 and len(set(costs)) > 1, "degenerate curve"
