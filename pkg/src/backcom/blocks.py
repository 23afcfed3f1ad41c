"""Shared machinery for the per-block solvers of both protocols.

The two protocols differ only in slot indexing and in the scalar rate
functions; the time-allocation LP, the dual-driven reflection step, the
SCA reflection step and the structured trajectory-program blocks are common
and are parameterized here.  The energy constraints come in two aggregation
flavors: ``cumulative`` (prefix sums, the default formulation) and
``per_slot`` (the harvest-then-forward benchmark).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dual import DualState, subgradient_dual_ascent
from .scenario import (FEASIBILITY_TOL, ScenarioParams, effective_circuit_power,
                       harvested_energy)
from .simplex import OPTIMAL, LpProblem, solve_lp

LN2 = math.log(2.0)

CUMULATIVE = "cumulative"
PER_SLOT = "per_slot"


def aggregation_matrix(k: int, mode: str) -> np.ndarray:
    if mode == CUMULATIVE:
        return np.tril(np.ones((k, k)))
    if mode == PER_SLOT:
        return np.eye(k)
    raise ValueError(f"unknown energy aggregation mode {mode!r}")


def closed_form_time_allocation(params: ScenarioParams, a, theta) -> np.ndarray:
    """Budget-depleting allocation [eta*(1-a)*P*theta / p_c] clipped to [0,1]."""
    raw = params.eta * (1.0 - np.asarray(a)) * params.p_tx * np.asarray(theta) / params.p_c
    return np.clip(raw, 0.0, 1.0)


def allocate_time(params: ScenarioParams, rates, theta, a,
                  mode: str = CUMULATIVE):
    """Optimal backscatter fractions for fixed rates and harvest gains.

    Solves the time-allocation LP.  Under the static model with a
    non-increasing rate sequence and no clipping, the closed form above is
    provably the LP optimum and is used directly; clipping would leave unused
    carry-over budget that later slots could spend, which breaks the
    closed-form argument, so the fast path is guarded on both conditions.
    """
    rates = np.asarray(rates, dtype=float)
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    harvest = harvested_energy(params, a, theta)
    pe = effective_circuit_power(params, rates)
    if mode == PER_SLOT:
        return np.minimum(1.0, harvest / pe), "closed_form"
    if params.mu == 0.0:
        raw = harvest / params.p_c
        if np.all(np.diff(rates) <= 1e-12) and np.all(raw <= 1.0):
            return np.clip(raw, 0.0, 1.0), "closed_form"
    k = rates.size
    agg = aggregation_matrix(k, mode)
    prob = LpProblem(c=rates, a_ub=agg * pe[None, :], b_ub=agg @ harvest,
                     lower=np.zeros(k), upper=np.ones(k))
    res = solve_lp(prob)
    if res.status != OPTIMAL:
        raise RuntimeError(f"time-allocation LP ended with status {res.status}")
    return np.clip(res.x, 0.0, 1.0), "lp"


def reflection_dual_closed_form(phi, gain_coef, offsets, tails) -> np.ndarray:
    """Box-clipped stationary point of the per-block Lagrangian in a.

    ``gain_coef[i] = ln2 * eta * P * theta_harvest[i]`` and ``offsets[i]`` is
    the protocol-specific intercept; ``tails[i]`` is the suffix sum of the
    multipliers from block i on.  Blocks with phi == 0 contribute nothing to
    the objective and take a = 0 as the tie-break.
    """
    phi = np.asarray(phi, dtype=float)
    denom = gain_coef * tails
    with np.errstate(divide="ignore", invalid="ignore"):
        lead = np.where(phi > 0.0, phi / denom, 0.0)
    lead = np.where(np.isnan(lead), 0.0, lead)
    return np.clip(lead - offsets, 0.0, 1.0)


def exact_tail_multipliers(phi, harvest_coef, gain_coef, offsets,
                           spend) -> np.ndarray:
    """Exact dual multipliers of the cumulative energy constraints.

    The dual decomposes over the tail sums T_i = sum_{n>=i} nu_n, each with a
    convex one-dimensional piece whose derivative is
    ``harvest_coef_i * (1 - a_i(T)) - spend_i`` for the box-clipped closed
    form ``a_i(T) = clip(phi_i/(gain_coef_i*T) - offsets_i, 0, 1)``; the
    constraint is that T be nonincreasing and nonnegative.  Pool-adjacent-
    violators with bisection on the pooled derivative solves it to machine
    precision, and the pooled roots make the complementary-slackness products
    vanish exactly at every pool boundary.
    """
    phi = np.asarray(phi, dtype=float)
    h = np.asarray(harvest_coef, dtype=float)
    gamma = np.asarray(gain_coef, dtype=float)
    c = np.asarray(offsets, dtype=float)
    s = np.asarray(spend, dtype=float)
    k = phi.size
    t_cap = 1e30

    def pooled_derivative(idx, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            lead = np.where(phi[idx] > 0.0, phi[idx] / (gamma[idx] * t), 0.0)
        a = np.clip(lead - c[idx], 0.0, 1.0)
        return float(np.sum(h[idx] * (1.0 - a) - s[idx]))

    def pool_root(idx):
        if pooled_derivative(idx, 1e-300) >= 0.0:
            return 0.0
        hi = 1.0
        while pooled_derivative(idx, hi) < 0.0:
            hi *= 8.0
            if hi > t_cap:
                return t_cap
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if pooled_derivative(idx, mid) < 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * hi:
                break
        return 0.5 * (lo + hi)

    pools = []  # (start, end, T)
    for i in range(k):
        start, end = i, i
        t_val = pool_root(np.arange(i, i + 1))
        while pools and pools[-1][2] < t_val:  # T must be nonincreasing
            p_start, _, _ = pools.pop()
            start = p_start
            t_val = pool_root(np.arange(start, end + 1))
        pools.append((start, end, t_val))
    tails = np.empty(k)
    for start, end, t_val in pools:
        tails[start:end + 1] = t_val
    nu = -np.diff(np.concatenate([tails, [0.0]]))
    return np.maximum(nu, 0.0)


def greedy_reflection_repair(params: ScenarioParams, a, phi, theta,
                             rate_slope_fn) -> np.ndarray:
    """Restore cumulative energy feasibility by trimming a where cheapest.

    Walks the prefixes in order; a deficit at prefix n is covered by lowering
    the coefficients of blocks <= n in increasing order of objective loss per
    unit of recovered harvest (phi * rate'(a) over eta*P*theta).
    """
    a = np.clip(np.asarray(a, dtype=float).copy(), 0.0, 1.0)
    phi = np.asarray(phi, dtype=float)
    h = params.eta * params.p_tx * np.asarray(theta, dtype=float)
    resid = np.cumsum(h * (1.0 - a) - phi * params.p_c)
    for n in range(a.size):
        deficit = -resid[n]
        if deficit <= 0.0:
            continue
        while deficit > 0.0:
            slopes = phi * rate_slope_fn(a)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where((a > 0.0) & (h > 0.0), slopes / h, np.inf)
            ratio[n + 1:] = np.inf
            j = int(np.argmin(ratio))
            if not np.isfinite(ratio[j]):
                break  # nothing left to trim; instance infeasible even at a=0
            da = min(a[j], deficit / h[j])
            a[j] -= da
            recovered = da * h[j]
            resid[j:] += recovered
            deficit -= recovered
    return a


def solve_reflection_dual(params: ScenarioParams, phi, theta_harvest, offsets,
                          rate_fn, rate_slope_fn, step_size=0.01,
                          max_iters=5000, tol=1e-7):
    """Static-model reflection step: Lagrangian closed form at exact duals.

    The multipliers come from the exact tail-space solve; the projected
    subgradient iteration then runs on them, normally terminating at once on
    the complementary-slackness measure (a fixed-step search from zero cannot
    span the 1e5 multiplier scale of these instances).  ``rate_fn(a)`` gives
    the per-block objective rates and ``rate_slope_fn(a)`` their derivative,
    used by the feasibility repair.  Returns (a, DualState).
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta_harvest, dtype=float)
    k = phi.size
    gain_coef = LN2 * params.eta * params.p_tx * theta
    harvest_coef = params.eta * params.p_tx * theta
    consumption = np.cumsum(phi * params.p_c)

    def primal(nu):
        tails = np.cumsum(nu[::-1])[::-1]
        a = reflection_dual_closed_form(phi, gain_coef, offsets, tails)
        return a, float(phi @ rate_fn(a))

    def residuals(a):
        return np.cumsum(harvested_energy(params, a, theta)) - consumption

    def repair(a):
        if residuals(a).min(initial=0.0) >= -FEASIBILITY_TOL:
            return a
        return greedy_reflection_repair(params, a, phi, theta, rate_slope_fn)

    nu0 = exact_tail_multipliers(phi, harvest_coef, gain_coef, offsets,
                                 phi * params.p_c)
    state = DualState(multipliers=nu0, step_size=step_size)
    state, a = subgradient_dual_ascent(
        primal, residuals, state, max_iters=max_iters, tol=tol,
        lower_bound_fn=lambda av: float(phi @ rate_fn(repair(av))))
    return repair(a), state


@dataclass
class SeparableLogObjective:
    """f(x) = sum_i phi_i * log2(1 + g_i * x_i), concave and separable."""

    phi: np.ndarray
    gain: np.ndarray

    def value(self, x):
        return float(self.phi @ np.log2(1.0 + self.gain * x))

    def value_and_grad(self, x):
        arg = 1.0 + self.gain * x
        val = float(self.phi @ np.log2(arg))
        return val, self.phi * self.gain / (LN2 * arg)

    def add_hessian(self, x, h_out, coef):
        arg = 1.0 + self.gain * x
        diag = -self.phi * self.gain ** 2 / (LN2 * arg ** 2)
        h_out[np.diag_indices_from(h_out)] += coef * diag


class LinearObjective:
    """f(x) = c0 + c . x"""

    def __init__(self, c0, c):
        self.c0 = float(c0)
        self.c = np.asarray(c, dtype=float)

    def value(self, x):
        return self.c0 + float(self.c @ x)

    def value_and_grad(self, x):
        return self.value(x), self.c.copy()

    def add_hessian(self, x, h_out, coef):
        pass


class QuadraticDropObjective:
    """f(x) = c0 - sum_i w_i * ||x[block_i] - center||^2 over 2-vector blocks."""

    def __init__(self, c0, offsets, weights, center):
        self.c0 = float(c0)
        self.offsets = np.asarray(offsets, dtype=int)
        self.weights = np.asarray(weights, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.cols = np.stack([self.offsets, self.offsets + 1], axis=1)

    def _pairs(self, x):
        return x[self.cols] - self.center[None, :]

    def value(self, x):
        d = self._pairs(x)
        return self.c0 - float(self.weights @ np.sum(d * d, axis=1))

    def value_and_grad(self, x):
        d = self._pairs(x)
        val = self.c0 - float(self.weights @ np.sum(d * d, axis=1))
        grad = np.zeros_like(x)
        np.add.at(grad, self.cols, -2.0 * self.weights[:, None] * d)
        return val, grad

    def add_hessian(self, x, h_out, coef):
        idx = self.cols.ravel()
        np.add.at(h_out, (idx, idx), coef * np.repeat(-2.0 * self.weights, 2))


class MobilityBlock:
    """||q_{n+1} - q_n||^2 <= (v_max * delta)^2 for every step, normalized.

    The first and last trajectory points are fixed constants; interior point
    j occupies x[2(j-1):2j].
    """

    def __init__(self, n_slots, q_init, q_final, step_cap):
        self.n = n_slots
        self.q0 = np.asarray(q_init, dtype=float)
        self.qn = np.asarray(q_final, dtype=float)
        self.cap2 = float(step_cap) ** 2

    def count(self):
        return self.n

    def _points(self, x):
        pts = np.empty((self.n + 1, 2))
        pts[0] = self.q0
        pts[-1] = self.qn
        pts[1:-1] = x[:2 * (self.n - 1)].reshape(-1, 2)
        return pts

    def values(self, x):
        pts = self._points(x)
        d = np.diff(pts, axis=0)
        return (np.sum(d * d, axis=1) - self.cap2) / self.cap2

    def values_and_grads(self, x):
        pts = self._points(x)
        d = np.diff(pts, axis=0)
        vals = (np.sum(d * d, axis=1) - self.cap2) / self.cap2
        grads = np.zeros((self.n, x.size))
        two_d = 2.0 * d / self.cap2
        rows = np.arange(self.n)
        # d/dq_{n+1} = +2d, d/dq_n = -2d; endpoints are constants
        for col in (0, 1):
            head = rows[:-1]  # step n ends at interior point n+1
            grads[head, 2 * head + col] += two_d[head, col]
            tail = rows[1:]   # step n starts at interior point n
            grads[tail, 2 * (tail - 1) + col] -= two_d[tail, col]
        return vals, grads

    def add_weighted_hessian(self, x, weights, h_out):
        w = 2.0 * weights / self.cap2
        for col in (0, 1):
            idx_head = 2 * np.arange(self.n - 1) + col      # point n+1 of step n
            np.add.at(h_out, (idx_head, idx_head), w[:-1])
            idx_tail = 2 * (np.arange(1, self.n) - 1) + col  # point n of step n
            np.add.at(h_out, (idx_tail, idx_tail), w[1:])
            cross = 2 * np.arange(1, self.n - 1) + col
            prev = cross - 2
            np.add.at(h_out, (cross, prev), -w[1:-1])
            np.add.at(h_out, (prev, cross), -w[1:-1])


class ScalarConvexFn:
    """Triple (f, f', f'') of a smooth convex scalar function, vectorized."""

    def __init__(self, f, d1, d2):
        self.f, self.d1, self.d2 = f, d1, d2


def tb_slack_rate_fn(w_a, h2):
    """log2(1 + w_a/(y + H^2)) as a function of the slack y (convex, decreasing)."""
    def f(y):
        return np.log2(1.0 + w_a / (y + h2))

    def d1(y):
        d = y + h2
        return -w_a / (LN2 * d * (d + w_a))

    def d2(y):
        d = y + h2
        return w_a * (2.0 * d + w_a) / (LN2 * d ** 2 * (d + w_a) ** 2)

    return ScalarConvexFn(f, d1, d2)


def tbr_slack_rate_fn(c):
    """log2(1 + C/s^2) as a function of the slack s > 0 (convex, decreasing)."""
    def f(s):
        return np.log2(1.0 + c / s ** 2)

    def d1(s):
        return -2.0 * c / (LN2 * s * (s ** 2 + c))

    def d2(s):
        return 2.0 * c * (3.0 * s ** 2 + c) / (LN2 * s ** 2 * (s ** 2 + c) ** 2)

    return ScalarConvexFn(f, d1, d2)


class EnergyBlock:
    """Aggregated energy constraints of the trajectory subproblem.

    Row n states  sum_i agg[n,i] * (phi_i * pe_i(slack_i) - production_i(q)) <= 0
    where production is the linearized harvest  c0_i - c1_i * u_i(q)  and the
    dynamic circuit term pe depends on a scalar slack through ``slack_fn``.
    Rows are normalized by the aggregated full-harvest scale.
    """

    def __init__(self, agg, q_offsets, center, prod_const, prod_coef,
                 phi, p_eps, mu, slack_fn=None, slack_offsets=None):
        self.agg = np.asarray(agg, dtype=float)
        self.k = self.agg.shape[0]
        self.q_offsets = np.asarray(q_offsets, dtype=int)
        self.cols = np.stack([self.q_offsets, self.q_offsets + 1], axis=1)
        self.center = np.asarray(center, dtype=float)
        self.prod_const = np.asarray(prod_const, dtype=float)
        self.prod_coef = np.asarray(prod_coef, dtype=float)  # >= 0, times u
        self.phi = np.asarray(phi, dtype=float)
        self.p_eps = float(p_eps)
        self.mu = float(mu)
        self.slack_fn = slack_fn
        self.slack_offsets = (np.asarray(slack_offsets, dtype=int)
                              if slack_offsets is not None else None)
        scale = self.agg @ np.maximum(self.prod_const, 1e-300)
        self.scale = np.maximum(scale, float(np.max(self.prod_const, initial=1e-300)) * 1e-3)

    def count(self):
        return self.k

    def _pieces(self, x):
        d = x[self.cols] - self.center[None, :]
        u = np.sum(d * d, axis=1)
        piece = self.prod_coef * u - self.prod_const
        if self.mu > 0.0:
            slack = x[self.slack_offsets]
            piece = piece + self.phi * (self.p_eps + self.mu * self.slack_fn.f(slack))
        else:
            piece = piece + self.phi * self.p_eps
        return piece, d, u

    def values(self, x):
        piece, _, _ = self._pieces(x)
        return (self.agg @ piece) / self.scale

    def values_and_grads(self, x):
        piece, d, _ = self._pieces(x)
        vals = (self.agg @ piece) / self.scale
        gq = 2.0 * self.prod_coef[:, None] * d  # d(piece_i)/d(q_i)
        # scatter per-block gradient pieces, then aggregate rows
        pieces_grad = np.zeros((self.k, x.size))
        for col in (0, 1):
            pieces_grad[np.arange(self.k), self.cols[:, col]] += gq[:, col]
        if self.mu > 0.0:
            slack = x[self.slack_offsets]
            gs = self.phi * self.mu * self.slack_fn.d1(slack)
            pieces_grad[np.arange(self.k), self.slack_offsets] += gs
        grads = (self.agg @ pieces_grad) / self.scale[:, None]
        return vals, grads

    def add_weighted_hessian(self, x, weights, h_out):
        # suffix-style accumulation: block i appears in rows with agg[n,i] = 1
        row_w = weights / self.scale
        block_w = self.agg.T @ row_w
        wq = 2.0 * self.prod_coef * block_w
        for col in (0, 1):
            idx = self.cols[:, col]
            np.add.at(h_out, (idx, idx), wq)
        if self.mu > 0.0:
            slack = x[self.slack_offsets]
            ws = self.phi * self.mu * self.slack_fn.d2(slack) * block_w
            np.add.at(h_out, (self.slack_offsets, self.slack_offsets), ws)


class SlackLinkBlock:
    """Constraints slack_i - 2 d_i . q_i <= rhs_i (affine), normalized."""

    def __init__(self, q_offsets, slack_offsets, d_vecs, rhs, scale):
        self.q_offsets = np.asarray(q_offsets, dtype=int)
        self.slack_offsets = np.asarray(slack_offsets, dtype=int)
        self.d = np.asarray(d_vecs, dtype=float)
        self.rhs = np.asarray(rhs, dtype=float)
        self.scale = float(scale)
        self.k = self.rhs.size

    def count(self):
        return self.k

    def _matrix(self, n):
        a = np.zeros((self.k, n))
        rows = np.arange(self.k)
        a[rows, self.slack_offsets] = 1.0
        for col in (0, 1):
            a[rows, self.q_offsets + col] -= 2.0 * self.d[:, col]
        return a / self.scale

    def values(self, x):
        lin = x[self.slack_offsets] - 2.0 * np.sum(
            self.d * x[np.stack([self.q_offsets, self.q_offsets + 1], axis=1)],
            axis=1)
        return (lin - self.rhs) / self.scale

    def values_and_grads(self, x):
        return self.values(x), self._matrix(x.size)

    def add_weighted_hessian(self, x, weights, h_out):
        pass


class DistanceCapBlock:
    """Constraints ||q_i - center||^2 + H^2 - t_i <= 0, normalized by H^2."""

    def __init__(self, q_offsets, t_offsets, center, h2):
        self.q_offsets = np.asarray(q_offsets, dtype=int)
        self.cols = np.stack([self.q_offsets, self.q_offsets + 1], axis=1)
        self.t_offsets = np.asarray(t_offsets, dtype=int)
        self.center = np.asarray(center, dtype=float)
        self.h2 = float(h2)
        self.k = self.q_offsets.size

    def count(self):
        return self.k

    def values(self, x):
        d = x[self.cols] - self.center[None, :]
        return (np.sum(d * d, axis=1) + self.h2 - x[self.t_offsets]) / self.h2

    def values_and_grads(self, x):
        d = x[self.cols] - self.center[None, :]
        vals = (np.sum(d * d, axis=1) + self.h2 - x[self.t_offsets]) / self.h2
        grads = np.zeros((self.k, x.size))
        rows = np.arange(self.k)
        for col in (0, 1):
            grads[rows, self.cols[:, col]] = 2.0 * d[:, col] / self.h2
        grads[rows, self.t_offsets] = -1.0 / self.h2
        return vals, grads

    def add_weighted_hessian(self, x, weights, h_out):
        w = 2.0 * weights / self.h2
        for col in (0, 1):
            idx = self.cols[:, col]
            np.add.at(h_out, (idx, idx), w)


def solve_reflection_sca(params: ScenarioParams, phi, theta_harvest, g_gain,
                         a0, mode: str = CUMULATIVE, inner_tol: float = 1e-5,
                         max_inner: int = 10, scp_tol: float = 1e-8):
    """Dynamic-model reflection step by SCA on the energy constraint.

    The objective rates log2(1 + g_i * a_i) stay exact (they are concave);
    only the rate inside the energy constraint is replaced by its tangent at
    the current iterate, which upper-bounds it, so every iterate is feasible
    for the true constraint.  ``g_gain`` holds the per-block SNR slopes g_i.
    """
    from .barrier import AffineBlock, SmoothConvexProgram, solve_scp

    phi = np.asarray(phi, dtype=float)
    g_gain = np.asarray(g_gain, dtype=float)
    theta = np.asarray(theta_harvest, dtype=float)
    k = phi.size
    agg = aggregation_matrix(k, mode)
    eta_p_theta = params.eta * params.p_tx * theta
    scale = np.maximum(agg @ eta_p_theta, eta_p_theta.max() * 1e-3)

    def objective_value(a):
        return float(phi @ np.log2(1.0 + g_gain * a))

    a_cur = np.clip(np.asarray(a0, dtype=float), 0.0, 1.0)
    best = objective_value(a_cur)
    passes = 0
    for _ in range(max_inner):
        passes += 1
        arg = 1.0 + g_gain * a_cur
        r_cur = np.log2(arg)
        slope = g_gain / (LN2 * arg)
        coef = phi * params.mu * slope + eta_p_theta
        const = eta_p_theta - phi * (params.p_eps + params.mu * (r_cur - slope * a_cur))
        a_mat = (agg * coef[None, :]) / scale[:, None]
        b_vec = (agg @ const) / scale
        program = SmoothConvexProgram(
            n_vars=k,
            objective=SeparableLogObjective(phi, g_gain),
            blocks=[AffineBlock(a_mat, b_vec)],
            lower=np.zeros(k), upper=np.ones(k))
        res = solve_scp(program, a_cur, tol=scp_tol)
        a_new = np.clip(res.x, 0.0, 1.0)
        v_new = objective_value(a_new)
        improved = v_new - best
        if v_new >= best:
            a_cur, best = a_new, v_new
        if improved < inner_tol * max(1.0, abs(best)):
            break
    return a_cur, passes


def feasibility_scale_phi(params: ScenarioParams, phi, a, theta, rates,
                          mode: str = CUMULATIVE) -> np.ndarray:
    """Scale phi down by the largest factor that restores energy feasibility."""
    phi = np.asarray(phi, dtype=float)
    agg = aggregation_matrix(phi.size, mode)
    harvest = agg @ harvested_energy(params, a, theta)
    spend = agg @ (phi * effective_circuit_power(params, rates))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(spend > 0.0, harvest / spend, np.inf)
    s = float(min(1.0, ratio.min(initial=np.inf)))
    return phi if s >= 1.0 else np.clip(phi * s, 0.0, 1.0)
