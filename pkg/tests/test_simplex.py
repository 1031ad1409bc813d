import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog

from costprune.errors import LPStallError
from costprune.forest import compute_routing_profile
from costprune.oracle import enumerate_vertices
from costprune.problem import build_ip3
from costprune.simplex import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    StandardLP,
    Tolerances,
    format_lp,
    solve,
    solve_lexicographic,
    warm_start_solve,
)
from costprune.synthetic import random_instance


def lp(A, b, c):
    return StandardLP(sp.csc_matrix(np.asarray(A, dtype=float)), b, c)


def random_feasible_lp(rng, m=6, n=10):
    A = rng.integers(-3, 4, size=(m, n)).astype(float)
    x0 = rng.random(n) * (rng.random(n) < 0.6)
    b = A @ x0
    c = rng.integers(-2, 6, size=n).astype(float) + rng.random(n)
    # keep it bounded: one row caps the total
    A = np.vstack([A, np.ones(n)])
    b = np.append(b, x0.sum() + 1.0)
    A = np.hstack([A, np.eye(m + 1)[:, -1:]])
    c = np.append(c, 0.0)
    return lp(A, b, c)


BEALE = (
    [[1, 0, 0, 0.25, -60, -0.04, 9], [0, 1, 0, 0.5, -90, -0.02, 3], [0, 0, 1, 0, 0, 1, 0]],
    [0, 0, 1],
    [0, 0, 0, -0.75, 150, -0.02, 6],
)


class TestSolve:
    def test_single_equality(self):
        sol = solve(lp([[1.0]], [1.0], [1.0]))
        assert sol.status == OPTIMAL
        assert sol.x.tolist() == [1.0] and sol.y.tolist() == [1.0] and sol.objective == 1.0

    def test_returns_vertex(self):
        sol = solve(lp([[1, 1]], [1], [-1, -1]))
        assert sol.objective == -1
        assert sol.x.tolist() in ([1.0, 0.0], [0.0, 1.0])

    def test_infeasible(self):
        assert solve(lp([[1, 1]], [-1], [1, 1])).status == INFEASIBLE

    def test_unbounded(self):
        assert solve(lp([[1, -1]], [1], [-1, 0])).status == UNBOUNDED

    def test_negative_rhs_and_redundant_rows(self):
        sol = solve(lp([[1, 1, 0], [-1, -1, 0], [0, 1, 1]], [2, -2, 1], [1, 2, 0]))
        assert sol.status == OPTIMAL and sol.objective == pytest.approx(2.0)

    def test_matches_vertex_enumeration(self, rng):
        for _ in range(60):
            prob = random_feasible_lp(rng)
            best, vertices = enumerate_vertices(prob.A, prob.b, prob.cost)
            sol = solve(prob)
            assert sol.status == OPTIMAL
            assert sol.objective == pytest.approx(best, abs=1e-8)
            assert any(np.allclose(sol.x, v, atol=1e-8) for v in vertices)

    def test_matches_highs(self, rng):
        for _ in range(60):
            prob = random_feasible_lp(rng, m=12, n=25)
            ref = linprog(prob.cost, A_eq=prob.A.toarray(), b_eq=prob.b, bounds=(0, None), method="highs")
            sol = solve(prob)
            assert sol.objective == pytest.approx(ref.fun, abs=1e-7)

    def test_kkt_and_strong_duality(self, rng):
        for _ in range(30):
            prob = random_feasible_lp(rng)
            sol = solve(prob)
            res = sol.kkt_residuals(prob)
            tol = Tolerances()
            assert res["primal"] <= tol.feas_tol and res["bound"] <= tol.feas_tol
            assert res["dual"] <= tol.opt_tol and res["complementarity"] <= tol.opt_tol
            assert res["gap"] <= tol.opt_tol * (1 + abs(sol.objective))

    def test_deterministic(self, rng):
        prob = random_feasible_lp(rng)
        a, b = solve(prob), solve(prob)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.basis, b.basis) and a.iterations == b.iterations

    def test_degenerate_cycling_example(self):
        sol = warm_start_solve(lp(*BEALE), [0, 1, 2], bland_after=10_000)
        assert sol.objective == pytest.approx(-0.05)
        sol = warm_start_solve(lp(*BEALE), [0, 1, 2], bland_after=1)
        assert sol.objective == pytest.approx(-0.05) and sol.used_bland

    def test_stall_is_an_error(self):
        with pytest.raises(LPStallError):
            warm_start_solve(lp(*BEALE), [0, 1, 2], max_iter=1)


class TestWarmStart:
    def test_own_basis_zero_pivots(self, rng):
        prob = random_feasible_lp(rng)
        cold = solve(prob)
        warm = warm_start_solve(prob, cold.basis)
        assert warm.warm_started and warm.iterations == 0
        assert np.array_equal(warm.x, cold.x)

    def test_small_lambda_change_keeps_basis(self):
        # unique, nondegenerate optimum: min x1 + 2 x2 + lam x3, x1 + x2 + x3 = 1, x2 - x3 + x4 = 0.5
        A = [[1, 1, 1, 0], [0, 1, -1, 1]]
        base = solve(lp(A, [1, 0.5], [1, 2, 3, 0]))
        moved = warm_start_solve(lp(A, [1, 0.5], [1, 2, 3 + 1e-6, 0]), base.basis)
        assert moved.iterations == 0 and np.array_equal(np.sort(moved.basis), np.sort(base.basis))

    def test_small_lambda_change_on_pruning_problem(self, rng):
        ens, data = random_instance(rng, n_trees=2, max_depth=3, n_examples=15)
        p = build_ip3(ens, compute_routing_profile(ens, data), 0.05)
        first = warm_start_solve(p.to_standard_lp(), p.all_leaves_basis())
        again = warm_start_solve(p.with_lambda(0.05 + 1e-9).to_standard_lp(), first.basis)
        assert again.warm_started and again.objective == pytest.approx(first.objective, abs=1e-8)

    @pytest.mark.parametrize("basis,reason", [([0, 0, 1], "malformed_basis"), ([3, 4, 5], "singular_basis"), ([0, 1, 2], "infeasible_basis")])
    def test_fallback(self, basis, reason):
        # columns 3..5 are copies of column 0, so any basis of them is singular
        A = [[1, 1, 0, 1, 1, 1], [0, 1, 1, 0, 0, 0], [1, 0, 1, 1, 1, 1]]
        b = [1, -1, 2] if reason == "infeasible_basis" else [1, 1, 2]
        prob = lp(A, b, [1, 2, 3, 1, 1, 1])
        warm = warm_start_solve(prob, basis)
        cold = solve(prob)
        assert warm.fallback == reason and not warm.warm_started
        assert warm.status == cold.status
        if cold.status == OPTIMAL:
            assert warm.objective == pytest.approx(cold.objective)

    def test_crash_basis_is_feasible(self, rng):
        for _ in range(10):
            ens, data = random_instance(rng, n_trees=3, max_depth=4, n_examples=20)
            p = build_ip3(ens, compute_routing_profile(ens, data), 0.1)
            sol = warm_start_solve(p.to_standard_lp(), p.all_leaves_basis())
            assert sol.warm_started and sol.fallback is None and sol.phase1_iterations == 0


class TestLexicographic:
    def test_second_objective_on_optimal_face(self):
        A = [[1, 1, 0], [0, 0, 1]]
        prob = lp(A, [1, 1], [0, 0, 0])
        sol = solve_lexicographic(prob, [np.array([1.0, 1.0, 0.0]), np.array([0.0, -1.0, 0.0])])
        assert sol.x.tolist() == [0.0, 1.0, 1.0]
        assert sol.objective == 1.0 and sol.y is not None

    def test_primary_objective_unchanged(self, rng):
        for _ in range(20):
            prob = random_feasible_lp(rng)
            plain = solve(prob)
            lex = solve_lexicographic(prob, [prob.cost, rng.normal(size=prob.n)])
            assert lex.objective == pytest.approx(plain.objective, abs=1e-8)


def test_format_lp():
    text = format_lp(lp([[1, -0.5]], [1.0 / 3.0], [2, 0]), ["a", "b"])
    assert text == "Minimize\n obj: 2 a\nSubject To\n c0: 1 a - 0.5 b = 0.333333333333\nEnd\n"
