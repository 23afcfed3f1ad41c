"""Relayed (TBR) protocol: three-slot blocks with the UAV as decode-and-forward.

Block n occupies slots 3n-2 (UAV broadcast, BD harvests), 3n-1 (BD
backscatters to the UAV) and 3n (UAV forwards to the receiver).  The relayed
problem drops the information-causality constraint up front because the
one-hop downlink dominates the two-hop uplink by orders of magnitude; the
audit below re-checks that reduction on every returned solution.
"""

from __future__ import annotations

import time

import numpy as np

from . import blocks
from .barrier import SmoothConvexProgram, solve_scp
from .blocks import (CUMULATIVE, PER_SLOT, DistanceCapBlock, EnergyBlock,
                     LinearObjective, MobilityBlock, SlackLinkBlock,
                     aggregation_matrix)
from .report import (PROPOSED, STATUS_CONVERGED, STATUS_MAX_ITERS, SolveConfig,
                     SolveReport)
from .scenario import (FEASIBILITY_TOL, ScenarioParams, Schedule, Trajectory,
                       check_energy_feasibility, check_mobility, harvest_gains,
                       path_gain)
from .surrogates import gain_lower, uplink_rate_lower_in_t

TbrSolveConfig = SolveConfig


def uplink_distances_sq(params: ScenarioParams, traj: Trajectory) -> np.ndarray:
    """u_i = ||q_{3i+2} - w_b||^2 at the backscatter-slot positions."""
    pts = traj.points[params.backscatter_slots()]
    d = pts - params.w_b[None, :]
    return np.sum(d * d, axis=1)


def tbr_block_rates(params: ScenarioParams, traj: Trajectory, a) -> np.ndarray:
    """Uplink rates log2(1 + P*a*theta_bs^2/sigma_u^2), one per block."""
    u = uplink_distances_sq(params, traj)
    theta = params.beta0 / (u + params.altitude_h ** 2)
    return np.log2(1.0 + params.p_tx * np.asarray(a) * theta ** 2 / params.sigma_u2)


def tbr_downlink_rates(params: ScenarioParams, traj: Trajectory) -> np.ndarray:
    """Forward-slot rates log2(1 + P*theta_ur/sigma_r^2), one per block."""
    pts = traj.points[params.forward_slots()]
    theta = path_gain(params, pts, params.w_r)
    return np.log2(1.0 + params.p_tx * theta / params.sigma_r2)


def tbr_objective(params: ScenarioParams, traj: Trajectory, a, phi) -> float:
    return float(np.asarray(phi) @ tbr_block_rates(params, traj, a))


def audit_information_causality(params: ScenarioParams, traj: Trajectory,
                                a, phi) -> np.ndarray:
    """Per-prefix forwarded-minus-received margin of the relay buffer.

    Entry n is sum_{i<=n} R^r_i - sum_{i<=n} phi_i * R^u_i; positive margins
    everywhere confirm that dropping the causality constraint was harmless
    for this solution.  Negative margins are returned, never suppressed.
    """
    up = tbr_block_rates(params, traj, a)
    down = tbr_downlink_rates(params, traj)
    return np.cumsum(down - np.asarray(phi) * up)


def tbr_time_allocation(params: ScenarioParams, traj: Trajectory, a,
                        mode: str = CUMULATIVE,
                        diagnostics: dict | None = None):
    """Optimal backscatter fractions for the current trajectory and a."""
    rates = tbr_block_rates(params, traj, a)
    theta = harvest_gains(params, traj)
    phi, method = blocks.allocate_time(params, rates, theta, np.asarray(a), mode)
    if diagnostics is not None:
        diagnostics["time_allocation"] = method
    return phi


def tbr_reflection(params: ScenarioParams, traj: Trajectory, phi,
                   config: SolveConfig = SolveConfig(), a0=None,
                   mode: str = CUMULATIVE, diagnostics: dict | None = None):
    """Reflection coefficients for fixed trajectory and time allocation."""
    phi = np.asarray(phi, dtype=float)
    k = params.n_blocks
    a0 = np.full(k, 0.0) if a0 is None else np.clip(np.asarray(a0, float), 0, 1)
    if not np.any(phi > 0.0):
        return np.zeros(k)
    theta_h = harvest_gains(params, traj)
    u_bs = uplink_distances_sq(params, traj)
    theta_bs = params.beta0 / (u_bs + params.altitude_h ** 2)
    g_gain = params.p_tx * theta_bs ** 2 / params.sigma_u2
    if params.mu == 0.0:
        if mode == PER_SLOT:
            bound = 1.0 - phi * params.p_c / (params.eta * params.p_tx * theta_h)
            a = np.where(phi > 0.0, np.clip(bound, 0.0, 1.0), 0.0)
            if diagnostics is not None:
                diagnostics["reflection"] = "per_slot_closed_form"
        else:
            offsets = params.sigma_u2 / (params.p_tx * theta_bs ** 2)
            a, state = blocks.solve_reflection_dual(
                params, phi, theta_h, offsets,
                rate_fn=lambda av: np.log2(1.0 + g_gain * av),
                rate_slope_fn=lambda av: g_gain / (blocks.LN2 * (1.0 + g_gain * av)),
                step_size=config.dual_step, max_iters=config.dual_max_iters,
                tol=config.dual_tol)
            if diagnostics is not None:
                diagnostics["reflection"] = "dual"
                diagnostics["dual_converged"] = state.converged
                diagnostics["dual_cs_measure"] = state.cs_measure
    else:
        a, passes = blocks.solve_reflection_sca(
            params, phi, theta_h, g_gain=g_gain, a0=a0, mode=mode,
            inner_tol=config.inner_tol, max_inner=config.max_inner_iters,
            scp_tol=config.scp_tol)
        if diagnostics is not None:
            diagnostics["reflection"] = "sca"
            diagnostics["reflection_passes"] = passes
    if tbr_objective(params, traj, a, phi) < tbr_objective(params, traj, a0, phi):
        rates0 = tbr_block_rates(params, traj, a0)
        sched0 = Schedule(protocol="tbr", a=a0, phi=phi)
        resid0 = check_energy_feasibility(params, traj, sched0, rates0)
        if resid0.min(initial=0.0) >= -FEASIBILITY_TOL:
            return a0
    return a


def _tbr_trajectory_program(params, a, phi, traj_ref, mode):
    """One linearized trajectory subproblem around ``traj_ref``."""
    n = params.n_slots
    k = params.n_blocks
    h2 = params.altitude_h ** 2
    harvest_idx = params.harvest_slots()
    uplink_idx = params.backscatter_slots()
    q_off_h = 2 * (harvest_idx - 1)
    q_off_u = 2 * (uplink_idx - 1)
    n_q = 2 * (n - 1)
    with_slack = params.mu > 0.0
    n_vars = n_q + k + (k if with_slack else 0)
    t_off = n_q + np.arange(k)

    u_ref = uplink_distances_sq(params, traj_ref)
    t_ref = u_ref + h2
    rate_bound = uplink_rate_lower_in_t(params, a, t_ref)
    c_lin = np.zeros(n_vars)
    c_lin[t_off] = phi * rate_bound.slope
    c0 = float(phi @ (rate_bound.value - rate_bound.slope * t_ref))
    objective = LinearObjective(c0, c_lin)

    uh_ref = np.sum((traj_ref.points[harvest_idx] - params.w_b[None, :]) ** 2,
                    axis=1)
    gain_bound = gain_lower(params, uh_ref)
    scale_h = params.eta * params.p_tx * (1.0 - a)
    prod_const = scale_h * (gain_bound.value - gain_bound.slope * uh_ref)
    prod_coef = scale_h * (-gain_bound.slope)

    agg = aggregation_matrix(k, mode)
    reach = (float(np.linalg.norm(params.q_init - params.w_b))
             + params.v_max * params.period_t)
    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    lower[t_off] = 0.5 * h2
    upper[t_off] = reach ** 2 + 2.0 * h2
    x0 = np.empty(n_vars)
    x0[:n_q] = traj_ref.points[1:-1].reshape(-1)
    x0[t_off] = t_ref * (1.0 + 1e-12)  # a hair above the distance cap

    t_link = DistanceCapBlock(q_off_u, t_off, params.w_b, h2)
    constraint_blocks = [t_link]
    if with_slack:
        s_off = n_q + k + np.arange(k)
        lower[s_off] = 0.1 * h2
        upper[s_off] = reach ** 2 + 2.0 * h2
        x0[s_off] = t_ref * (1.0 - 1e-12)  # a hair below the linearized cap
        c_dyn = params.p_tx * a * params.beta0 ** 2 / params.sigma_u2
        slack_fn = blocks.tbr_slack_rate_fn(c_dyn)
        d_vecs = traj_ref.points[uplink_idx] - params.w_b[None, :]
        link = SlackLinkBlock(
            q_off_u, s_off, d_vecs,
            rhs=u_ref - 2.0 * np.sum(d_vecs * traj_ref.points[uplink_idx],
                                     axis=1) + h2,
            scale=h2)
        energy = EnergyBlock(agg, q_off_h, params.w_b, prod_const, prod_coef,
                             phi, params.p_eps, params.mu, slack_fn, s_off)
        constraint_blocks += [energy, link]
    else:
        energy = EnergyBlock(agg, q_off_h, params.w_b, prod_const, prod_coef,
                             phi, params.p_c, 0.0)
        constraint_blocks.append(energy)

    mobility = MobilityBlock(n, params.q_init, params.q_final,
                             params.v_max * params.delta)
    program = SmoothConvexProgram(
        n_vars=n_vars, objective=objective,
        blocks=[mobility] + constraint_blocks, lower=lower, upper=upper)
    return program, x0, n_q, t_off


def tbr_trajectory(params: ScenarioParams, a, phi, traj_prev: Trajectory,
                   config: SolveConfig = SolveConfig(), mode: str = CUMULATIVE,
                   diagnostics: dict | None = None) -> Trajectory:
    """Trajectory update by iterated linearized subproblems.

    The distance slack t upper-bounds the squared uplink distance (tight at
    any optimum) and the energy slack s lower-bounds it, so accepted iterates
    remain feasible for the true cumulative constraint.
    """
    a = np.clip(np.asarray(a, dtype=float), 0.0, 1.0)
    phi = np.asarray(phi, dtype=float)
    if not np.any(phi * a > 0.0):
        return traj_prev
    traj = traj_prev
    obj = tbr_objective(params, traj, a, phi)
    passes = 0
    slack_gap = 0.0
    for _ in range(config.max_inner_iters):
        passes += 1
        program, x0, n_q, t_off = _tbr_trajectory_program(params, a, phi, traj, mode)
        res = solve_scp(program, x0, tol=config.scp_tol)
        pts = np.empty((params.n_slots + 1, 2))
        pts[0] = params.q_init
        pts[-1] = params.q_final
        pts[1:-1] = res.x[:n_q].reshape(-1, 2)
        cand = Trajectory(pts)
        ok, violation = check_mobility(params, cand)
        rates_c = tbr_block_rates(params, cand, a)
        resid = _energy_residuals(params, cand, a, phi, rates_c, mode)
        if not ok or resid.min(initial=0.0) < -FEASIBILITY_TOL:
            if diagnostics is not None:
                diagnostics.setdefault("warnings", []).append(
                    f"tbr trajectory pass {passes} rejected "
                    f"(mobility={violation:.2e}, residual={resid.min():.2e})")
            break
        t_val = res.x[t_off]
        u_new = uplink_distances_sq(params, cand)
        slack_gap = float(np.max(np.abs(
            t_val - (u_new + params.altitude_h ** 2))
            / (u_new + params.altitude_h ** 2)))
        new_obj = tbr_objective(params, cand, a, phi)
        if new_obj < obj - 1e-12:
            break
        improvement = new_obj - obj
        traj, obj = cand, new_obj
        if improvement < config.inner_tol * max(1.0, abs(obj)):
            break
    if diagnostics is not None:
        diagnostics["trajectory_passes"] = passes
        diagnostics["t_slack_rel_gap"] = slack_gap
    return traj


def _energy_residuals(params, traj, a, phi, rates, mode):
    sched = Schedule(protocol=params.protocol, a=a, phi=phi)
    resid = check_energy_feasibility(params, traj, sched, rates)
    if mode == PER_SLOT:
        return np.diff(np.concatenate([[0.0], resid]))
    return resid


def tbr_bcd_solve(params: ScenarioParams, config: SolveConfig = SolveConfig(),
                  init_trajectory: Trajectory | None = None, init_a=None,
                  init_phi=None, scheme: str = PROPOSED) -> SolveReport:
    """Alternating optimization of the relayed protocol.

    Same loop structure as the direct-link solver; the returned report also
    carries the causality audit margins for the Remark-style reduction.
    """
    if params.protocol != "tbr":
        raise ValueError("scenario protocol must be 'tbr'")
    t_start = time.perf_counter()
    k = params.n_blocks
    traj = init_trajectory or Trajectory.straight_line(params)
    a = (np.full(k, config.init_reflection) if init_a is None
         else np.clip(np.asarray(init_a, dtype=float), 0.0, 1.0))
    theta = harvest_gains(params, traj)
    if init_phi is not None:
        rates = tbr_block_rates(params, traj, a)
        phi = blocks.feasibility_scale_phi(params, np.asarray(init_phi, float),
                                           a, theta, rates, config.energy_mode)
    else:
        phi = np.zeros(k)

    notes: dict = {}
    history = []
    obj = tbr_objective(params, traj, a, phi)
    converged = False
    for outer in range(1, config.max_outer_iters + 1):
        phi = tbr_time_allocation(params, traj, a, config.energy_mode, notes)
        a = tbr_reflection(params, traj, phi, config, a0=a,
                           mode=config.energy_mode, diagnostics=notes)
        if config.optimize_trajectory:
            traj = tbr_trajectory(params, a, phi, traj, config,
                                  mode=config.energy_mode, diagnostics=notes)
        new_obj = tbr_objective(params, traj, a, phi)
        history.append(new_obj)
        if outer > 1 and new_obj - obj < config.bcd_tol * max(obj, 1e-12):
            obj = new_obj
            converged = True
            break
        obj = new_obj

    rates = tbr_block_rates(params, traj, a)
    sched = Schedule(protocol="tbr", a=a, phi=phi)
    residuals = check_energy_feasibility(params, traj, sched, rates)
    ok, violation = check_mobility(params, traj)
    margins = audit_information_causality(params, traj, a, phi)
    return SolveReport(
        protocol="tbr", scheme=scheme, objective=obj,
        objective_history=history, a=a, phi=phi, trajectory=traj, rates=rates,
        energy_residuals=residuals, mobility_ok=ok,
        mobility_violation=violation, converged=converged,
        n_iterations=len(history),
        wall_time_s=time.perf_counter() - t_start,
        status=STATUS_CONVERGED if converged else STATUS_MAX_ITERS,
        causality_margins=margins,
        downlink_rates=tbr_downlink_rates(params, traj),
        notes=notes)
