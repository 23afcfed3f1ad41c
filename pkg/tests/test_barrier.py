"""Interior-point solver against analytic optima and grid refinement."""

import numpy as np
import pytest

from backcom.barrier import (AffineBlock, CallableObjective,
                             SmoothConvexProgram, solve_scp)


def quadratic_objective(q_mat, x_star):
    q_mat = np.asarray(q_mat, dtype=float)

    def fn(x):
        d = x - x_star
        return -0.5 * float(d @ q_mat @ d), -(q_mat @ d)

    return CallableObjective(fn, hessian=lambda x: -q_mat)


def test_unconstrained_quadratic_hits_analytic_max():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = rng.normal(size=(3, 3))
        q = a @ a.T + 0.5 * np.eye(3)
        x_star = rng.normal(size=3)
        prog = SmoothConvexProgram(n_vars=3, objective=quadratic_objective(q, x_star))
        res = solve_scp(prog, x0=np.zeros(3), tol=1e-9)
        assert res.status == "optimal"
        assert np.max(np.abs(res.x - x_star)) < 1e-8


def refine_grid_max(fn, lower, upper, resolution=1e-6):
    lo = np.array(lower, dtype=float)
    hi = np.array(upper, dtype=float)
    best = None
    while True:
        xs = np.linspace(lo[0], hi[0], 41)
        ys = np.linspace(lo[1], hi[1], 41)
        vals = np.array([[fn(np.array([x, y])) for y in ys] for x in xs])
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        best = np.array([xs[i], ys[j]])
        span = hi - lo
        if span.max() <= resolution * 40:
            return best, vals[i, j]
        lo = np.maximum(best - span / 8, lower)
        hi = np.minimum(best + span / 8, upper)


def test_box_log_objective_matches_grid_refinement():
    def value(x):
        return 3.0 * np.log(0.5 + x[0]) + np.log(2.0 - 0.6 * x[0] + 0.3 * x[1]) - 0.8 * x[1]

    def fn(x):
        g = np.array([
            3.0 / (0.5 + x[0]) - 0.6 / (2.0 - 0.6 * x[0] + 0.3 * x[1]),
            0.3 / (2.0 - 0.6 * x[0] + 0.3 * x[1]) - 0.8,
        ])
        return value(x), g

    prog = SmoothConvexProgram(
        n_vars=2, objective=CallableObjective(fn),
        lower=np.zeros(2), upper=np.ones(2))
    res = solve_scp(prog, x0=np.array([0.5, 0.5]), tol=1e-10)
    x_grid, val_grid = refine_grid_max(value, [0, 0], [1, 1])
    assert np.max(np.abs(res.x - x_grid)) < 5e-6
    assert res.objective >= val_grid - 1e-8


def test_affine_constrained_quadratic_kkt_point():
    # max -||x||^2 s.t. x0 + x1 >= 1  ->  optimum at (0.5, 0.5)
    prog = SmoothConvexProgram(
        n_vars=2,
        objective=quadratic_objective(2.0 * np.eye(2), np.zeros(2)),
        blocks=[AffineBlock([[-1.0, -1.0]], [-1.0])],
    )
    res = solve_scp(prog, x0=np.array([1.0, 1.0]), tol=1e-9)
    assert res.status == "optimal"
    assert res.x == pytest.approx([0.5, 0.5], abs=1e-7)
    assert res.kkt_residual < 1e-8


def test_boundary_start_is_recovered_by_phase_one():
    def fn(x):
        return x[1], np.array([0.0, 1.0])

    prog = SmoothConvexProgram(
        n_vars=2, objective=CallableObjective(fn, hessian=lambda x: np.zeros((2, 2))),
        blocks=[AffineBlock([[1.0, 1.0]], [1.0])],
        lower=np.zeros(2), upper=np.ones(2))
    res = solve_scp(prog, x0=np.array([1.0, 0.0]), tol=1e-9)  # start on both boundaries
    assert res.objective == pytest.approx(1.0, abs=1e-6)


def test_objective_history_monotone_and_never_below_start():
    rng = np.random.default_rng(11)
    q = np.diag(rng.uniform(0.5, 2.0, size=3))
    x_star = np.array([2.0, 2.0, 2.0])  # outside the box: optimum on boundary
    prog = SmoothConvexProgram(
        n_vars=3, objective=quadratic_objective(q, x_star),
        lower=np.zeros(3), upper=np.ones(3))
    x0 = np.array([0.2, 0.4, 0.6])
    res = solve_scp(prog, x0=x0, tol=1e-9)
    hist = np.array(res.history)
    assert np.all(np.diff(hist) >= -1e-9)
    assert res.objective >= prog.objective.value(x0) - 1e-12
    assert res.x == pytest.approx(np.ones(3), abs=1e-6)
