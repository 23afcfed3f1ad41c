"""Projected subgradient descent on the Lagrangian dual of the static model.

The dual variables price the cumulative energy constraints.  Each update is
the projected rule nu <- [nu - pi * (harvest - consumption)]^+.  A fixed step
cannot work here: the optimal multipliers sit around 1e5 while the residuals
are micro-watt sized, so the step is chosen per iteration, preferring the
Polyak length (dual value minus best feasible primal value over the squared
residual norm) and falling back to two-way backtracking on the dual value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_STEP = 0.01  # initial step size
DEFAULT_MAX_ITERS = 5000
DEFAULT_TOL = 1e-7


@dataclass
class DualState:
    """Nonnegative multipliers plus step bookkeeping for the dual iteration."""

    multipliers: np.ndarray
    step_size: float = DEFAULT_STEP
    iteration: int = 0
    converged: bool = False
    cs_measure: float = float("inf")
    dual_value: float = float("nan")
    primal_bound: float = float("-inf")

    def __post_init__(self):
        nu = np.asarray(self.multipliers, dtype=float).reshape(-1)
        if np.any(nu < 0.0):
            raise ValueError("dual multipliers must be nonnegative")
        self.multipliers = nu


def subgradient_dual_ascent(primal_map, residual_map, state: DualState,
                            max_iters: int = DEFAULT_MAX_ITERS,
                            tol: float = DEFAULT_TOL,
                            lower_bound_fn=None):
    """Minimize the dual function by projected subgradient steps.

    ``primal_map(multipliers)`` returns ``(primal_point, primal_objective)``,
    the closed-form maximizer of the Lagrangian for the given multipliers;
    ``residual_map(primal_point)`` returns the per-constraint
    harvest-minus-consumption residuals, which are exactly the subgradient of
    the dual value ``objective + multipliers . residuals``.  The optional
    ``lower_bound_fn(primal_point)`` maps an iterate to the objective of a
    feasibility-repaired point and tightens the Polyak step.

    Terminates when the complementary-slackness measure max|nu_i r_i|
    (relative to the dual value) and the scaled violation drop below ``tol``,
    or when the duality-gap estimate certifies the same accuracy.  Returns
    ``(final_state, primal_point)``; ``converged`` is False on budget
    exhaustion.
    """
    nu = state.multipliers.copy()
    step = float(state.step_size)
    if step <= 0.0:
        raise ValueError("step size must be positive")

    def evaluate(mults):
        point, obj = primal_map(mults)
        resid = np.asarray(residual_map(point), dtype=float)
        return point, obj, resid, obj + float(mults @ resid)

    point, obj, resid, g_val = evaluate(nu)
    resid_scale = max(float(np.abs(resid).max(initial=0.0)), 1e-300)
    best_dual = (g_val, nu.copy(), point)
    primal_bound = float("-inf")
    if lower_bound_fn is not None:
        primal_bound = float(lower_bound_fn(point))

    def measure(mults, residuals, dual_value):
        scale = max(abs(dual_value), 1.0)
        cs = float(np.abs(mults * residuals).max(initial=0.0)) / scale
        infeas = max(0.0, -float(residuals.min(initial=0.0))) / resid_scale
        return max(cs, infeas)

    def gap_ok(dual_value):
        if not np.isfinite(primal_bound):
            return False
        return dual_value - primal_bound <= 0.1 * tol * max(abs(dual_value), 1.0)

    state.cs_measure = measure(nu, resid, g_val)
    iteration = 0
    while (iteration < max_iters and state.cs_measure >= tol
           and not gap_ok(g_val)):
        iteration += 1
        norm_sq = float(resid @ resid)
        if norm_sq == 0.0:
            break
        trials = []
        if np.isfinite(primal_bound) and g_val > primal_bound:
            trials.append((g_val - primal_bound) / norm_sq)
        trials.append(step * 2.0)
        accepted = False
        trial = max(trials)
        for _ in range(90):
            cand = np.maximum(nu - trial * resid, 0.0)
            if np.array_equal(cand, nu):
                trial *= 0.5
                continue
            c_point, c_obj, c_resid, c_val = evaluate(cand)
            if c_val <= g_val + 1e-14 * max(abs(g_val), 1.0):
                nu, point, obj, resid, g_val = cand, c_point, c_obj, c_resid, c_val
                step = trial
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            # kink of the piecewise-smooth dual: diminishing projected step
            trial = step / (1.0 + iteration) ** 0.5
            nu = np.maximum(nu - trial * resid, 0.0)
            point, obj, resid, g_val = evaluate(nu)
        if g_val < best_dual[0]:
            best_dual = (g_val, nu.copy(), point)
        if lower_bound_fn is not None:
            primal_bound = max(primal_bound, float(lower_bound_fn(point)))
        state.cs_measure = measure(nu, resid, g_val)

    if g_val > best_dual[0]:
        nu = best_dual[1]
        point, obj, resid, g_val = evaluate(nu)
        state.cs_measure = measure(nu, resid, g_val)
    state.multipliers = nu
    state.iteration += iteration
    state.step_size = step
    state.dual_value = g_val
    state.primal_bound = primal_bound
    state.converged = bool(state.cs_measure < tol or gap_ok(g_val))
    return state, point
