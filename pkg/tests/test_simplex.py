"""Bounded-variable simplex against brute-force vertex enumeration."""

import itertools

import numpy as np
import pytest

from backcom.simplex import (INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem,
                             solve_lp)


def enumerate_vertices(problem):
    """All basic feasible points of {Ax <= b, lo <= x <= up} by plane triples."""
    n = problem.c.size
    planes = []
    for i in range(problem.a_ub.shape[0]):
        planes.append((problem.a_ub[i], problem.b_ub[i]))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(problem.upper[j]):
            planes.append((e.copy(), problem.upper[j]))
        if np.isfinite(problem.lower[j]):
            planes.append((-e.copy(), -problem.lower[j]))
    best = None
    for combo in itertools.combinations(range(len(planes)), n):
        a = np.array([planes[k][0] for k in combo])
        b = np.array([planes[k][1] for k in combo])
        try:
            x = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            continue
        if np.any(problem.a_ub @ x > problem.b_ub + 1e-9):
            continue
        if np.any(x < problem.lower - 1e-9) or np.any(x > problem.upper + 1e-9):
            continue
        val = problem.c @ x
        if best is None or val > best:
            best = val
    return best


def random_feasible_problem(rng, n=3, m=3):
    a = rng.normal(size=(m, n))
    x_int = rng.uniform(0.2, 0.8, size=n)
    b = a @ x_int + rng.uniform(0.05, 1.0, size=m)
    c = rng.normal(size=n)
    return LpProblem(c=c, a_ub=a, b_ub=b, lower=np.zeros(n), upper=np.ones(n))


def test_single_variable_cap():
    prob = LpProblem(c=[1.0], a_ub=[[1.0]], b_ub=[0.5],
                     lower=[0.0], upper=[1.0])
    res = solve_lp(prob)
    assert res.status == OPTIMAL
    assert res.x[0] == pytest.approx(0.5, abs=1e-12)
    assert res.objective == pytest.approx(0.5, abs=1e-12)


def test_matches_vertex_enumeration_on_random_instances():
    rng = np.random.default_rng(1234)
    for trial in range(60):
        prob = random_feasible_problem(rng, n=3, m=rng.integers(1, 5))
        res = solve_lp(prob)
        assert res.status == OPTIMAL, f"trial {trial}"
        oracle = enumerate_vertices(prob)
        assert oracle is not None
        assert res.objective == pytest.approx(oracle, abs=1e-8), f"trial {trial}"
        assert np.all(prob.a_ub @ res.x <= prob.b_ub + 1e-9)


def test_strong_duality_certificate():
    rng = np.random.default_rng(77)
    for _ in range(30):
        prob = random_feasible_problem(rng, n=4, m=3)
        res = solve_lp(prob)
        assert res.status == OPTIMAL
        assert res.duality_gap <= 1e-8
        assert np.all(res.duals >= -1e-10)


def test_infeasible_detected():
    prob = LpProblem(c=[1.0], a_ub=[[1.0]], b_ub=[-1.0],
                     lower=[0.0], upper=[1.0])
    assert solve_lp(prob).status == INFEASIBLE


def test_unbounded_detected():
    prob = LpProblem(c=[1.0], a_ub=[[-1.0]], b_ub=[1.0],
                     lower=[0.0], upper=[np.inf])
    assert solve_lp(prob).status == UNBOUNDED


def test_pure_box_problem():
    prob = LpProblem(c=[1.0, -2.0], a_ub=np.zeros((0, 2)), b_ub=[],
                     lower=[0.0, 0.0], upper=[1.0, 1.0])
    res = solve_lp(prob)
    assert res.status == OPTIMAL
    assert res.x == pytest.approx([1.0, 0.0])


def test_prefix_budget_structure():
    # staircase LP of the time-allocation form: cumulative budgets
    rng = np.random.default_rng(5)
    for _ in range(20):
        k = int(rng.integers(2, 6))
        rates = np.sort(rng.uniform(0.1, 2.0, size=k))[::-1]
        harvest = rng.uniform(0.0, 1.5e-5, size=k)
        pe = 1e-5
        a = np.tril(np.ones((k, k))) * pe
        b = np.cumsum(harvest)
        prob = LpProblem(c=rates, a_ub=a, b_ub=b,
                         lower=np.zeros(k), upper=np.ones(k))
        res = solve_lp(prob)
        assert res.status == OPTIMAL
        assert np.all(np.cumsum(res.x * pe) <= b + 1e-12)
        oracle = enumerate_vertices(prob) if k <= 4 else None
        if oracle is not None:
            assert res.objective == pytest.approx(oracle, abs=1e-8)
