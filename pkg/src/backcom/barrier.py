"""Log-barrier interior-point solver for small dense smooth convex programs.

Problems are stated in maximization form: maximize a smooth concave objective
subject to smooth convex inequality constraints f_i(x) <= 0 and box bounds.
The path follows damped Newton centering steps with backtracking line search,
increasing the barrier weight geometrically until the duality-gap estimate
m/t drops below the requested tolerance.  Starts that sit exactly on the
constraint boundary (common after a tight time-allocation step) are moved to
the strict interior by an internal phase-I maximization of the margin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

STATUS_OPTIMAL = "optimal"
STATUS_NO_INTERIOR = "no_interior"
STATUS_STALLED = "stalled"
STATUS_KEPT_START = "kept_start"


class CallableObjective:
    """Adapter for a plain (value, gradient) evaluator; Hessian by differences."""

    def __init__(self, fn, hessian=None, fd_step=1e-6):
        self.fn = fn
        self._hessian = hessian
        self.fd_step = fd_step

    def value_and_grad(self, x):
        return self.fn(x)

    def value(self, x):
        return self.fn(x)[0]

    def add_hessian(self, x, h_out, coef):
        if self._hessian is not None:
            h_out += coef * self._hessian(x)
            return
        n = x.size
        hess = np.empty((n, n))
        for j in range(n):
            step = self.fd_step * max(1.0, abs(x[j]))
            xp = x.copy(); xp[j] += step
            xm = x.copy(); xm[j] -= step
            hess[:, j] = (self.fn(xp)[1] - self.fn(xm)[1]) / (2.0 * step)
        h_out += coef * 0.5 * (hess + hess.T)


class CallableConstraint:
    """Single smooth convex constraint f(x) <= 0 from a (value, grad) callable."""

    def __init__(self, fn, hessian=None, fd_step=1e-6):
        self._term = CallableObjective(fn, hessian, fd_step)

    def count(self):
        return 1

    def values(self, x):
        return np.array([self._term.value(x)])

    def values_and_grads(self, x):
        v, g = self._term.value_and_grad(x)
        return np.array([v]), g[None, :]

    def add_weighted_hessian(self, x, weights, h_out):
        self._term.add_hessian(x, h_out, weights[0])


class AffineBlock:
    """Affine constraints a @ x - b <= 0."""

    def __init__(self, a, b):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.a.shape[0] != self.b.size:
            raise ValueError("inconsistent affine block shapes")

    def count(self):
        return self.b.size

    def values(self, x):
        return self.a @ x - self.b

    def values_and_grads(self, x):
        return self.a @ x - self.b, self.a

    def add_weighted_hessian(self, x, weights, h_out):
        pass


@dataclass
class SmoothConvexProgram:
    """Concave objective, convex constraint blocks and box bounds."""

    n_vars: int
    objective: object
    blocks: list = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.lower is None:
            self.lower = np.full(self.n_vars, -np.inf)
        if self.upper is None:
            self.upper = np.full(self.n_vars, np.inf)
        self.lower = np.asarray(self.lower, dtype=float).reshape(self.n_vars)
        self.upper = np.asarray(self.upper, dtype=float).reshape(self.n_vars)
        fin = np.isfinite(self.lower) & np.isfinite(self.upper)
        if np.any(self.lower[fin] >= self.upper[fin]):
            raise ValueError("finite box bounds must satisfy lower < upper")

    def n_constraints(self):
        return sum(b.count() for b in self.blocks)

    def constraint_values(self, x):
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([b.values(x) for b in self.blocks])


@dataclass
class ScpResult:
    x: np.ndarray
    objective: float
    kkt_residual: float
    status: str
    newton_steps: int = 0
    barrier_stages: int = 0
    history: list = field(default_factory=list)
    final_t: float = 0.0


def _box_masks(program):
    lo_mask = np.isfinite(program.lower)
    hi_mask = np.isfinite(program.upper)
    return lo_mask, hi_mask


def _in_domain(program, x):
    lo_mask, hi_mask = _box_masks(program)
    if np.any(x[lo_mask] <= program.lower[lo_mask]):
        return False
    if np.any(x[hi_mask] >= program.upper[hi_mask]):
        return False
    vals = program.constraint_values(x)
    return bool(np.all(np.isfinite(vals)) and np.all(vals < 0.0))


def _barrier_value(program, x, t):
    # box first: the bounds also guard the domains of the constraint terms
    lo_mask, hi_mask = _box_masks(program)
    dlo = x[lo_mask] - program.lower[lo_mask]
    dhi = program.upper[hi_mask] - x[hi_mask]
    if np.any(dlo <= 0.0) or np.any(dhi <= 0.0):
        return np.inf, np.nan
    vals = program.constraint_values(x)
    if not (np.all(np.isfinite(vals)) and np.all(vals < 0.0)):
        return np.inf, np.nan
    f0 = program.objective.value(x)
    val = -t * f0 - np.log(-vals).sum()
    val -= np.log(dlo).sum() + np.log(dhi).sum()
    return val, f0


def _newton_center(program, x, t, newton_tol, max_steps):
    """Damped Newton minimization of the barrier at fixed t."""
    n = x.size
    lo_mask, hi_mask = _box_masks(program)
    steps = 0
    stalled = False
    for _ in range(max_steps):
        f0, g0 = program.objective.value_and_grad(x)
        grad = -t * g0
        hess = np.zeros((n, n))
        program.objective.add_hessian(x, hess, -t)
        feasible = True
        for block in program.blocks:
            vals, grads = block.values_and_grads(x)
            if np.any(vals >= 0.0):
                feasible = False
                break
            inv = 1.0 / (-vals)
            grad += grads.T @ inv
            hess += (grads * (inv ** 2)[:, None]).T @ grads
            block.add_weighted_hessian(x, inv, hess)
        if not feasible:
            raise RuntimeError("Newton iterate left the feasible domain")
        dlo = x[lo_mask] - program.lower[lo_mask]
        dhi = program.upper[hi_mask] - x[hi_mask]
        gb = np.zeros(n)
        gb[lo_mask] -= 1.0 / dlo
        gb[hi_mask] += 1.0 / dhi
        grad += gb
        hb = np.zeros(n)
        hb[lo_mask] += 1.0 / dlo ** 2
        hb[hi_mask] += 1.0 / dhi ** 2
        hess[np.diag_indices(n)] += hb

        direction = _solve_psd(hess, -grad)
        decrement = float(-grad @ direction)
        if decrement < 0.0:
            # ridge fallback produced an ascent direction; steepest descent
            direction = -grad
            decrement = float(grad @ grad)
        if 0.5 * decrement <= newton_tol:
            break
        psi0, _ = _barrier_value(program, x, t)
        slope = float(grad @ direction)
        # fraction-to-boundary on the box bounds avoids most domain rejects
        alpha = 1.0
        dlo_dir = direction[lo_mask]
        neg = dlo_dir < 0.0
        if np.any(neg):
            alpha = min(alpha, 0.995 * float(np.min(dlo / -dlo_dir, where=neg,
                                                    initial=np.inf)))
        dhi_dir = direction[hi_mask]
        pos = dhi_dir > 0.0
        if np.any(pos):
            alpha = min(alpha, 0.995 * float(np.min(dhi / dhi_dir, where=pos,
                                                    initial=np.inf)))
        accepted = False
        while alpha > 1e-14:
            cand = x + alpha * direction
            psi, _ = _barrier_value(program, cand, t)
            if np.isfinite(psi) and psi <= psi0 + 0.25 * alpha * slope:
                x = cand
                accepted = True
                break
            alpha *= 0.5
        steps += 1
        if not accepted:
            stalled = True
            break
    return x, steps, stalled


def _solve_psd(hess, rhs):
    ridge = 0.0
    scale = max(np.trace(hess) / hess.shape[0], 1e-12)
    for _ in range(12):
        try:
            if ridge:
                shifted = hess + ridge * np.eye(hess.shape[0])
            else:
                shifted = hess
            return cho_solve(cho_factor(shifted, lower=True,
                                        check_finite=False),
                             rhs, check_finite=False)
        except (LinAlgError, ValueError):
            ridge = scale * 1e-10 if ridge == 0.0 else ridge * 100.0
    return np.linalg.lstsq(hess, rhs, rcond=None)[0]


def _push_inside_box(program, x):
    x = np.array(x, dtype=float)
    lo_mask, hi_mask = _box_masks(program)
    span = np.where(lo_mask & hi_mask,
                    program.upper - program.lower, 1.0)
    eps = 1e-9 * np.maximum(span, 1.0)
    x[lo_mask] = np.maximum(x[lo_mask], program.lower[lo_mask] + eps[lo_mask])
    x[hi_mask] = np.minimum(x[hi_mask], program.upper[hi_mask] - eps[hi_mask])
    return x


class _ShiftedBlock:
    """Original block with the phase-I margin variable subtracted."""

    def __init__(self, block, n_orig):
        self.block = block
        self.n_orig = n_orig

    def count(self):
        return self.block.count()

    def values(self, x):
        return self.block.values(x[:self.n_orig]) - x[self.n_orig]

    def values_and_grads(self, x):
        vals, grads = self.block.values_and_grads(x[:self.n_orig])
        out = np.zeros((grads.shape[0], self.n_orig + 1))
        out[:, :self.n_orig] = grads
        out[:, self.n_orig] = -1.0
        return vals - x[self.n_orig], out

    def add_weighted_hessian(self, x, weights, h_out):
        self.block.add_weighted_hessian(
            x[:self.n_orig], weights, h_out[:self.n_orig, :self.n_orig])


class _MarginObjective:
    """maximize -e where e is the appended margin variable."""

    def __init__(self, n_orig):
        self.n_orig = n_orig

    def value(self, x):
        return -x[self.n_orig]

    def value_and_grad(self, x):
        g = np.zeros(self.n_orig + 1)
        g[self.n_orig] = -1.0
        return -x[self.n_orig], g

    def add_hessian(self, x, h_out, coef):
        pass


def _phase_one(program, x0, newton_tol):
    """Find a strictly feasible point; returns None when no interior exists."""
    n = program.n_vars
    vals0 = program.constraint_values(x0)
    if vals0.size == 0:
        return x0
    e0 = float(vals0.max()) + max(1.0, float(np.abs(vals0).max()))
    aux = SmoothConvexProgram(
        n_vars=n + 1,
        objective=_MarginObjective(n),
        blocks=[_ShiftedBlock(b, n) for b in program.blocks],
        lower=np.concatenate([program.lower, [-np.inf]]),
        upper=np.concatenate([program.upper, [e0 + 1.0]]),
    )
    x = np.concatenate([x0, [e0]])
    t = 10.0
    target = -1e-9 * max(1.0, abs(e0))
    for _ in range(12):
        x, _, stalled = _newton_center(aux, x, t, newton_tol, 60)
        if x[n] <= target:
            return x[:n]
        if aux.n_constraints() / t < abs(target) or stalled:
            break
        t *= 30.0
    if x[n] < 0.0:
        return x[:n]
    return None


def solve_scp(program: SmoothConvexProgram, x0, tol: float = 1e-8,
              t0: float = 1.0, t_factor: float = 20.0,
              newton_tol: float = 1e-9, max_newton: int = 80,
              max_stages: int = 60) -> ScpResult:
    """Maximize the program objective from a feasible start.

    ``x0`` may sit on the constraint boundary; an internal phase-I then finds
    a strictly interior start.  The returned point satisfies the KKT system
    within ``tol`` (stationarity + duality gap + violation) and its objective
    is never below objective(x0) - 1e-12 when x0 is itself feasible.
    """
    x0 = np.asarray(x0, dtype=float).reshape(program.n_vars)
    if np.any(x0 < program.lower - 1e-9) or np.any(x0 > program.upper + 1e-9):
        raise ValueError("x0 violates the box bounds")
    f0_start = program.objective.value(x0)
    vals0 = program.constraint_values(x0)
    start_feasible = bool(np.all(vals0 <= 1e-9)) if vals0.size else True

    x = _push_inside_box(program, x0)
    m_total = program.n_constraints() + int(np.isfinite(program.lower).sum()) \
        + int(np.isfinite(program.upper).sum())
    if not _in_domain(program, x):
        x_int = _phase_one(program, x, newton_tol=1e-8)
        if x_int is None or not _in_domain(program, x_int):
            return ScpResult(x=x0, objective=f0_start,
                             kkt_residual=float("inf"),
                             status=STATUS_NO_INTERIOR)
        x = x_int

    t = t0
    total_steps = 0
    stages = 0
    history = []
    status = STATUS_OPTIMAL
    while True:
        x, steps, stalled = _newton_center(program, x, t, newton_tol, max_newton)
        total_steps += steps
        stages += 1
        history.append(program.objective.value(x))
        gap = m_total / t
        if gap <= 0.5 * tol:
            break
        if stages >= max_stages:
            status = STATUS_STALLED
            break
        if stalled and gap <= 100.0 * tol:
            # line search exhausted very near the boundary; accept the stage
            status = STATUS_STALLED if gap > tol else STATUS_OPTIMAL
            break
        t *= t_factor

    kkt = _kkt_residual(program, x, t)
    f_final = program.objective.value(x)
    if start_feasible and f_final < f0_start - 1e-12:
        return ScpResult(x=x0, objective=f0_start, kkt_residual=kkt,
                         status=STATUS_KEPT_START, newton_steps=total_steps,
                         barrier_stages=stages, history=history, final_t=t)
    return ScpResult(x=x, objective=f_final, kkt_residual=kkt, status=status,
                     newton_steps=total_steps, barrier_stages=stages,
                     history=history, final_t=t)


def _kkt_residual(program, x, t):
    """Stationarity + complementarity + violation with fitted multipliers.

    The returned point is certified by the best nonnegative multipliers on
    the near-active set (least-squares fit), which is much sharper than the
    raw barrier multipliers 1/(t * margin) once t is large.
    """
    lo_mask, hi_mask = _box_masks(program)
    _, g0 = program.objective.value_and_grad(x)
    columns = []
    margins = []
    viol = 0.0
    lam_barrier = []
    for block in program.blocks:
        vals, grads = block.values_and_grads(x)
        viol = max(viol, float(np.max(vals, initial=-np.inf)))
        lam = 1.0 / (t * np.maximum(-vals, 1e-300))
        for i in range(vals.size):
            columns.append(grads[i])
            margins.append(-vals[i])
            lam_barrier.append(lam[i])
    n = x.size
    for j in np.where(lo_mask)[0]:
        e = np.zeros(n)
        e[j] = -1.0  # lower-bound normal: -x_j + l_j <= 0
        columns.append(e)
        margins.append(x[j] - program.lower[j])
        lam_barrier.append(1.0 / (t * max(x[j] - program.lower[j], 1e-300)))
    for j in np.where(hi_mask)[0]:
        e = np.zeros(n)
        e[j] = 1.0
        columns.append(e)
        margins.append(program.upper[j] - x[j])
        lam_barrier.append(1.0 / (t * max(program.upper[j] - x[j], 1e-300)))
    gap = len(columns) / t if columns else 0.0
    if not columns:
        return float(np.linalg.norm(g0, np.inf) + max(viol, 0.0))
    lam_barrier = np.asarray(lam_barrier)
    margins = np.asarray(margins)
    active = lam_barrier >= 1e-8 * max(lam_barrier.max(), 1e-300)
    stat = g0.copy()
    comp = 0.0
    if np.any(active):
        jac = np.array([columns[i] for i in np.where(active)[0]]).T
        lam = _nonneg_lstsq(jac, g0)
        stat = g0 - jac @ lam
        comp = float(lam @ margins[active])
    return float(np.linalg.norm(stat, np.inf) + min(comp, gap) + max(viol, 0.0))


def _nonneg_lstsq(jac, target, iters=12):
    """Small active-set nonnegative least squares ||target - jac @ lam||."""
    m = jac.shape[1]
    support = np.ones(m, dtype=bool)
    lam = np.zeros(m)
    for _ in range(iters):
        if not support.any():
            break
        sol, *_ = np.linalg.lstsq(jac[:, support], target, rcond=None)
        if np.all(sol >= 0.0):
            lam = np.zeros(m)
            lam[support] = sol
            return lam
        drop = np.where(support)[0][sol < 0.0]
        support[drop] = False
    lam = np.zeros(m)
    if support.any():
        sol, *_ = np.linalg.lstsq(jac[:, support], target, rcond=None)
        lam[support] = np.maximum(sol, 0.0)
    return lam
