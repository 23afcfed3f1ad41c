"""Exact bounded-variable primal simplex for small dense LPs.

Solves  maximize c.x  subject to  A x <= b,  lower <= x <= upper.
Bland's rule is used throughout, so the method terminates without cycling;
optimality is certified by the dual solution returned alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_PIVOT_TOL = 1e-11
_COST_TOL = 1e-10


@dataclass(frozen=True)
class LpProblem:
    """max c.x s.t. a_ub x <= b_ub, lower <= x <= upper (entries may be inf)."""

    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        a = np.atleast_2d(np.asarray(self.a_ub, dtype=float))
        b = np.atleast_1d(np.asarray(self.b_ub, dtype=float))
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        n = c.size
        if a.size == 0:
            a = a.reshape(0, n)
        if a.shape[1] != n or a.shape[0] != b.size:
            raise ValueError(f"inconsistent shapes: c{c.shape} A{a.shape} b{b.shape}")
        if lo.size != n or hi.size != n:
            raise ValueError("bound vectors must match the variable count")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(np.isinf(lo) & np.isinf(hi)):
            raise ValueError("every variable needs a finite lower or upper bound")
        for name, val in (("c", c), ("a_ub", a), ("b_ub", b)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None = None
    objective: float = float("nan")
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    duality_gap: float = float("nan")
    iterations: int = 0


class _BoundedSimplex:
    """Simplex over equality form [A | I][x; s] = b with variable bounds."""

    AT_LOWER, AT_UPPER, BASIC = 0, 1, 2

    def __init__(self, c, a_eq, b, lower, upper):
        self.m, self.n = a_eq.shape
        self.c = c
        self.A = a_eq
        self.b = b
        self.lower = lower
        self.upper = upper
        self.iterations = 0

    def setup_basis(self, basis):
        self.basis = np.asarray(basis, dtype=int)
        self.status_flags = np.full(self.n, self.AT_LOWER, dtype=int)
        # nonbasic variables rest at a finite bound, preferring the lower one
        for j in range(self.n):
            if np.isinf(self.lower[j]):
                self.status_flags[j] = self.AT_UPPER
        self.status_flags[self.basis] = self.BASIC
        self.binv = np.linalg.inv(self.A[:, self.basis])
        self.refresh_values()

    def nonbasic_value(self, j):
        return self.lower[j] if self.status_flags[j] == self.AT_LOWER else self.upper[j]

    def refresh_values(self):
        x = np.empty(self.n)
        for j in range(self.n):
            if self.status_flags[j] != self.BASIC:
                x[j] = self.nonbasic_value(j)
        nb_mask = self.status_flags != self.BASIC
        rhs = self.b - self.A[:, nb_mask] @ x[nb_mask]
        x[self.basis] = self.binv @ rhs
        self.x = x

    def refactorize(self):
        self.binv = np.linalg.inv(self.A[:, self.basis])
        self.refresh_values()

    def iterate(self, max_iters):
        """Run pivots until optimal/unbounded; returns a status string."""
        while True:
            self.iterations += 1
            if self.iterations > max_iters:
                raise RuntimeError("simplex iteration limit exceeded")
            if self.iterations % 64 == 0:
                self.refactorize()
            y = self.c[self.basis] @ self.binv
            reduced = self.c - y @ self.A
            entering = -1
            for j in range(self.n):  # Bland: smallest improving index
                if self.status_flags[j] == self.BASIC:
                    continue
                r = reduced[j]
                if self.status_flags[j] == self.AT_LOWER and r > _COST_TOL:
                    entering = j
                    break
                if self.status_flags[j] == self.AT_UPPER and r < -_COST_TOL:
                    entering = j
                    break
            if entering < 0:
                self.duals = y
                self.reduced = reduced
                return OPTIMAL
            sign = 1.0 if self.status_flags[entering] == self.AT_LOWER else -1.0
            direction = self.binv @ self.A[:, entering]  # basic change = -sign*dir*t
            t_max = self.upper[entering] - self.lower[entering]  # bound flip span
            leaving = -1
            leave_to = None
            xb = self.x[self.basis]
            for i in range(self.m):
                d = -sign * direction[i]
                if d < -_PIVOT_TOL:  # basic variable i decreases toward its lower bound
                    lb = self.lower[self.basis[i]]
                    if np.isinf(lb):
                        continue
                    ratio = (xb[i] - lb) / (-d)
                    target = self.AT_LOWER
                elif d > _PIVOT_TOL:  # increases toward its upper bound
                    ub = self.upper[self.basis[i]]
                    if np.isinf(ub):
                        continue
                    ratio = (ub - xb[i]) / d
                    target = self.AT_UPPER
                else:
                    continue
                ratio = max(ratio, 0.0)
                better = ratio < t_max - _PIVOT_TOL
                tie = abs(ratio - t_max) <= _PIVOT_TOL
                if better or (tie and (leaving < 0 or self.basis[i] < self.basis[leaving])):
                    t_max = min(t_max, ratio)
                    leaving = i
                    leave_to = target
            if np.isinf(t_max):
                return UNBOUNDED
            if leaving < 0:
                # entering variable flips to its opposite bound, basis unchanged
                self.status_flags[entering] = (
                    self.AT_UPPER if sign > 0 else self.AT_LOWER)
                self.refresh_values()
                continue
            # pivot: entering becomes basic, basis[leaving] moves to a bound
            out = self.basis[leaving]
            self.status_flags[out] = leave_to
            self.status_flags[entering] = self.BASIC
            self.basis[leaving] = entering
            # eta update of binv
            col = direction
            piv = col[leaving]
            if abs(piv) < _PIVOT_TOL:
                self.refactorize()
                continue
            eta = -col / piv
            eta[leaving] = 1.0 / piv
            row = self.binv[leaving, :].copy()
            self.binv += np.outer(eta, row)
            self.binv[leaving, :] = row / piv
            self.refresh_values()


def solve_lp(problem: LpProblem, tol: float = 1e-9,
             max_iters: int = 100_000) -> LpResult:
    """Solve the LP exactly; status is optimal, infeasible or unbounded."""
    n = problem.c.size
    m = problem.a_ub.shape[0]
    if m == 0:
        # pure box problem
        x = np.where(problem.c > 0, problem.upper, problem.lower)
        x = np.where(problem.c == 0,
                     np.where(np.isfinite(problem.lower), problem.lower,
                              problem.upper), x)
        if np.any(~np.isfinite(x)):
            return LpResult(status=UNBOUNDED)
        obj = float(problem.c @ x)
        return LpResult(status=OPTIMAL, x=x, objective=obj,
                        duals=np.zeros(0), reduced_costs=problem.c.copy(),
                        duality_gap=0.0)

    a_eq = np.hstack([problem.a_ub, np.eye(m)])
    c_full = np.concatenate([problem.c, np.zeros(m)])
    lower = np.concatenate([problem.lower, np.zeros(m)])
    upper = np.concatenate([problem.upper, np.full(m, np.inf)])

    # start with structural variables at a finite bound and slacks basic
    x0 = np.where(np.isfinite(problem.lower), problem.lower, problem.upper)
    slack0 = problem.b_ub - problem.a_ub @ x0

    sp = _BoundedSimplex(c_full, a_eq, problem.b_ub, lower, upper)
    if slack0.min(initial=0.0) >= -1e-12:
        sp.setup_basis(np.arange(n, n + m))
    else:
        status = _phase_one(sp, n, m, x0, slack0, max_iters)
        if status != OPTIMAL:
            return LpResult(status=status, iterations=sp.iterations)

    status = sp.iterate(max_iters)
    if status != OPTIMAL:
        return LpResult(status=status, iterations=sp.iterations)

    x = np.clip(sp.x[:n], problem.lower, problem.upper)
    obj = float(problem.c @ x)
    duals = np.maximum(-sp.reduced[n:], 0.0)  # slack reduced cost equals -y_i
    rc = sp.reduced[:n]
    gap = _duality_gap(problem, x, duals, rc)
    return LpResult(status=OPTIMAL, x=x, objective=obj, duals=duals,
                    reduced_costs=rc, duality_gap=gap,
                    iterations=sp.iterations)


def _duality_gap(problem: LpProblem, x, y, rc) -> float:
    contrib = np.where(rc > 0, rc * problem.upper,
                       np.where(rc < 0, rc * problem.lower, 0.0))
    contrib = np.where(np.isnan(contrib), 0.0, contrib)
    dual_obj = float(y @ problem.b_ub + contrib.sum())
    return abs(dual_obj - float(problem.c @ x))


def _phase_one(sp: _BoundedSimplex, n, m, x0, slack0, max_iters) -> str:
    """Drive artificial variables for violated rows out of the basis."""
    bad = np.where(slack0 < -1e-12)[0]
    k = bad.size
    art_cols = np.zeros((m, k))
    for idx, row in enumerate(bad):
        art_cols[row, idx] = -1.0
    a_ext = np.hstack([sp.A, art_cols])
    c_ph1 = np.concatenate([np.zeros(sp.n), -np.ones(k)])
    lower = np.concatenate([sp.lower, np.zeros(k)])
    upper = np.concatenate([sp.upper, np.full(k, np.inf)])
    ph1 = _BoundedSimplex(c_ph1, a_ext, sp.b, lower, upper)
    basis = np.arange(n, n + m)
    basis[bad] = sp.n + np.arange(k)
    ph1.setup_basis(basis)
    status = ph1.iterate(max_iters)
    sp.iterations += ph1.iterations
    if status != OPTIMAL:
        return INFEASIBLE
    if float(c_ph1 @ ph1.x) < -1e-9:
        return INFEASIBLE
    # swap any residual (zero-valued) artificials out of the basis
    for i in range(m):
        if ph1.basis[i] >= sp.n:
            row = ph1.binv[i, :] @ sp.A
            cand = np.where(np.abs(row) > 1e-9)[0]
            cand = [j for j in cand if ph1.status_flags[j] != ph1.BASIC]
            if not cand:
                ph1.basis[i] = n + i  # degenerate row; fall back to its slack
            else:
                ph1.basis[i] = cand[0]
    sp.setup_basis(ph1.basis)
    return OPTIMAL
