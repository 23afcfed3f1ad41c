"""Direct-link (TB) protocol: the three block subproblems and the outer loop.

Odd slots carry the UAV broadcast (the BD harvests), even slots carry the
backscatter transmission; the rate of backscatter slot 2n depends on the
reflection coefficient and the UAV position of the preceding odd slot.
"""

from __future__ import annotations

import time

import numpy as np

from . import blocks
from .barrier import SmoothConvexProgram, solve_scp
from .blocks import (CUMULATIVE, PER_SLOT, EnergyBlock, MobilityBlock,
                     QuadraticDropObjective, SlackLinkBlock, aggregation_matrix)
from .rates import TbLinkConstants, tb_link_constants
from .report import (PROPOSED, STATUS_CONVERGED, STATUS_MAX_ITERS, SolveConfig,
                     SolveReport)
from .scenario import (FEASIBILITY_TOL, ScenarioParams, Schedule, Trajectory,
                       check_energy_feasibility, check_mobility, harvest_gains)
from .surrogates import gain_lower, trajectory_rate_lower

TbSolveConfig = SolveConfig


def block_distances_sq(params: ScenarioParams, traj: Trajectory) -> np.ndarray:
    """u_i = ||q_{2i+1} - w_b||^2 at the transmit-slot positions."""
    pts = traj.points[params.harvest_slots()]
    d = pts - params.w_b[None, :]
    return np.sum(d * d, axis=1)


def tb_block_rates(params: ScenarioParams, consts: TbLinkConstants,
                   traj: Trajectory, a) -> np.ndarray:
    u = block_distances_sq(params, traj)
    return np.log2(1.0 + consts.w_br * np.asarray(a) / (u + params.altitude_h ** 2))


def tb_objective(params: ScenarioParams, consts: TbLinkConstants,
                 traj: Trajectory, a, phi) -> float:
    return float(np.asarray(phi) @ tb_block_rates(params, consts, traj, a))


def tb_time_allocation(params: ScenarioParams, traj: Trajectory, a,
                       mode: str = CUMULATIVE, diagnostics: dict | None = None):
    """Optimal backscatter fractions for the current trajectory and a."""
    consts = tb_link_constants(params)
    rates = tb_block_rates(params, consts, traj, a)
    theta = harvest_gains(params, traj)
    phi, method = blocks.allocate_time(params, rates, theta, np.asarray(a), mode)
    if diagnostics is not None:
        diagnostics["time_allocation"] = method
    return phi


def tb_reflection(params: ScenarioParams, traj: Trajectory, phi,
                  config: SolveConfig = SolveConfig(), a0=None,
                  mode: str = CUMULATIVE, diagnostics: dict | None = None):
    """Reflection coefficients for fixed trajectory and time allocation.

    Static model: Lagrangian closed form driven by dual subgradient descent
    (cumulative mode) or the per-slot bound (per-slot mode).  Dynamic model:
    SCA with the tangent upper bound replacing the rate inside the energy
    constraint.  ``a0`` is the current iterate; the result never has a lower
    objective than ``a0``.
    """
    consts = tb_link_constants(params)
    phi = np.asarray(phi, dtype=float)
    k = params.n_blocks
    a0 = np.full(k, 0.0) if a0 is None else np.clip(np.asarray(a0, float), 0, 1)
    if not np.any(phi > 0.0):
        return np.zeros(k)  # objective is identically zero; tie-break at a=0
    u = block_distances_sq(params, traj)
    d_sq = u + params.altitude_h ** 2
    theta = harvest_gains(params, traj)
    if params.mu == 0.0:
        if mode == PER_SLOT:
            bound = 1.0 - phi * params.p_c / (params.eta * params.p_tx * theta)
            a = np.where(phi > 0.0, np.clip(bound, 0.0, 1.0), 0.0)
            if diagnostics is not None:
                diagnostics["reflection"] = "per_slot_closed_form"
        else:
            offsets = d_sq / consts.w_br
            a, state = blocks.solve_reflection_dual(
                params, phi, theta, offsets,
                rate_fn=lambda av: np.log2(1.0 + consts.w_br * av / d_sq),
                rate_slope_fn=lambda av: consts.w_br / (
                    blocks.LN2 * (d_sq + consts.w_br * av)),
                step_size=config.dual_step, max_iters=config.dual_max_iters,
                tol=config.dual_tol)
            if diagnostics is not None:
                diagnostics["reflection"] = "dual"
                diagnostics["dual_converged"] = state.converged
                diagnostics["dual_cs_measure"] = state.cs_measure
            if not state.converged:
                diagnostics = diagnostics if diagnostics is not None else {}
                diagnostics.setdefault("warnings", []).append(
                    "reflection dual ascent hit its iteration budget")
    else:
        a, passes = blocks.solve_reflection_sca(
            params, phi, theta, g_gain=consts.w_br / d_sq, a0=a0, mode=mode,
            inner_tol=config.inner_tol, max_inner=config.max_inner_iters,
            scp_tol=config.scp_tol)
        if diagnostics is not None:
            diagnostics["reflection"] = "sca"
            diagnostics["reflection_passes"] = passes
    # keep the better of the candidate and the incumbent (both feasible)
    if tb_objective(params, consts, traj, a, phi) < tb_objective(
            params, consts, traj, a0, phi):
        rates0 = tb_block_rates(params, consts, traj, a0)
        sched0 = Schedule(protocol="tb", a=a0, phi=phi)
        resid0 = check_energy_feasibility(params, traj, sched0, rates0)
        if resid0.min(initial=0.0) >= -FEASIBILITY_TOL:
            return a0
    return a


def _tb_trajectory_program(params, consts, a, phi, traj_ref, mode):
    """One linearized trajectory subproblem around ``traj_ref``."""
    n = params.n_slots
    k = params.n_blocks
    h2 = params.altitude_h ** 2
    point_idx = params.harvest_slots()          # odd slots 1, 3, .., N-1
    q_offsets = 2 * (point_idx - 1)             # interior point j at 2(j-1)
    n_q = 2 * (n - 1)
    with_slack = params.mu > 0.0
    n_vars = n_q + (k if with_slack else 0)

    u_ref = block_distances_sq(params, traj_ref)
    rate_bound = trajectory_rate_lower(params, consts, u_ref, a)
    drop = -rate_bound.slope * phi              # phi_i * B_i >= 0
    c0 = float(phi @ rate_bound.value + drop @ u_ref)
    objective = QuadraticDropObjective(c0, q_offsets, drop, params.w_b)

    gain_bound = gain_lower(params, u_ref)
    scale_h = params.eta * params.p_tx * (1.0 - a)
    prod_const = scale_h * (gain_bound.value - gain_bound.slope * u_ref)
    prod_coef = scale_h * (-gain_bound.slope)

    agg = aggregation_matrix(k, mode)
    lower = np.full(n_vars, -np.inf)
    upper = np.full(n_vars, np.inf)
    x0 = np.empty(n_vars)
    x0[:n_q] = traj_ref.points[1:-1].reshape(-1)

    if with_slack:
        slack_offsets = n_q + np.arange(k)
        slack_fn = blocks.tb_slack_rate_fn(consts.w_br * a, h2)
        reach = (float(np.linalg.norm(params.q_init - params.w_b))
                 + params.v_max * params.period_t)
        lower[slack_offsets] = -0.9 * h2
        upper[slack_offsets] = reach ** 2 + h2
        # sit a hair below the linearized cap so warm starts stay interior
        x0[slack_offsets] = u_ref - 1e-12 * (u_ref + h2)
        d_vecs = traj_ref.points[point_idx] - params.w_b[None, :]
        link = SlackLinkBlock(
            q_offsets, slack_offsets, d_vecs,
            rhs=u_ref - 2.0 * np.sum(d_vecs * traj_ref.points[point_idx], axis=1),
            scale=h2)
        energy = EnergyBlock(agg, q_offsets, params.w_b, prod_const, prod_coef,
                             phi, params.p_eps, params.mu, slack_fn, slack_offsets)
        constraint_blocks = [energy, link]
    else:
        energy = EnergyBlock(agg, q_offsets, params.w_b, prod_const, prod_coef,
                             phi, params.p_c, 0.0)
        constraint_blocks = [energy]

    mobility = MobilityBlock(n, params.q_init, params.q_final,
                             params.v_max * params.delta)
    program = SmoothConvexProgram(
        n_vars=n_vars, objective=objective,
        blocks=[mobility] + constraint_blocks, lower=lower, upper=upper)
    return program, x0, n_q


def tb_trajectory(params: ScenarioParams, a, phi, traj_prev: Trajectory,
                  config: SolveConfig = SolveConfig(), mode: str = CUMULATIVE,
                  diagnostics: dict | None = None) -> Trajectory:
    """Trajectory update by iterated linearized subproblems.

    Every accepted iterate is feasible for the true energy constraint because
    the harvest side uses the gain lower bound and the circuit side evaluates
    the rate at a slack that under-estimates the squared distance.
    """
    consts = tb_link_constants(params)
    a = np.clip(np.asarray(a, dtype=float), 0.0, 1.0)
    phi = np.asarray(phi, dtype=float)
    if not np.any(phi * a > 0.0):
        return traj_prev
    traj = traj_prev
    obj = tb_objective(params, consts, traj, a, phi)
    passes = 0
    for _ in range(config.max_inner_iters):
        passes += 1
        program, x0, n_q = _tb_trajectory_program(params, consts, a, phi, traj, mode)
        res = solve_scp(program, x0, tol=config.scp_tol)
        pts = np.empty((params.n_slots + 1, 2))
        pts[0] = params.q_init
        pts[-1] = params.q_final
        pts[1:-1] = res.x[:n_q].reshape(-1, 2)
        cand = Trajectory(pts)
        ok, violation = check_mobility(params, cand)
        rates_c = tb_block_rates(params, consts, cand, a)
        resid = _energy_residuals(params, cand, a, phi, rates_c, mode)
        if not ok or resid.min(initial=0.0) < -FEASIBILITY_TOL:
            if diagnostics is not None:
                diagnostics.setdefault("warnings", []).append(
                    f"trajectory pass {passes} rejected "
                    f"(mobility={violation:.2e}, residual={resid.min():.2e})")
            break
        new_obj = tb_objective(params, consts, cand, a, phi)
        if new_obj < obj - 1e-12:
            break
        improvement = new_obj - obj
        traj, obj = cand, new_obj
        if improvement < config.inner_tol * max(1.0, abs(obj)):
            break
    if diagnostics is not None:
        diagnostics["trajectory_passes"] = passes
    return traj


def _energy_residuals(params, traj, a, phi, rates, mode):
    sched = Schedule(protocol=params.protocol, a=a, phi=phi)
    resid = check_energy_feasibility(params, traj, sched, rates)
    if mode == PER_SLOT:
        per_slot = np.diff(np.concatenate([[0.0], resid]))
        return per_slot
    return resid


def tb_bcd_solve(params: ScenarioParams, config: SolveConfig = SolveConfig(),
                 init_trajectory: Trajectory | None = None, init_a=None,
                 init_phi=None, scheme: str = PROPOSED) -> SolveReport:
    """Alternating optimization of time allocation, reflection and trajectory.

    Stops when the fractional objective increase drops below ``bcd_tol``;
    the objective history is non-decreasing by construction (each block step
    keeps the incumbent when it cannot improve on it).
    """
    if params.protocol != "tb":
        raise ValueError("scenario protocol must be 'tb'")
    t_start = time.perf_counter()
    consts = tb_link_constants(params)
    k = params.n_blocks
    traj = init_trajectory or Trajectory.straight_line(params)
    a = (np.full(k, config.init_reflection) if init_a is None
         else np.clip(np.asarray(init_a, dtype=float), 0.0, 1.0))
    theta = harvest_gains(params, traj)
    if init_phi is not None:
        rates = tb_block_rates(params, consts, traj, a)
        phi = blocks.feasibility_scale_phi(params, np.asarray(init_phi, float),
                                           a, theta, rates, config.energy_mode)
    else:
        phi = np.zeros(k)

    notes: dict = {}
    history = []
    obj = tb_objective(params, consts, traj, a, phi)
    converged = False
    for outer in range(1, config.max_outer_iters + 1):
        phi = tb_time_allocation(params, traj, a, config.energy_mode, notes)
        a = tb_reflection(params, traj, phi, config, a0=a,
                          mode=config.energy_mode, diagnostics=notes)
        if config.optimize_trajectory:
            traj = tb_trajectory(params, a, phi, traj, config,
                                 mode=config.energy_mode, diagnostics=notes)
        new_obj = tb_objective(params, consts, traj, a, phi)
        history.append(new_obj)
        if outer > 1 and new_obj - obj < config.bcd_tol * max(obj, 1e-12):
            obj = new_obj
            converged = True
            break
        obj = new_obj

    rates = tb_block_rates(params, consts, traj, a)
    sched = Schedule(protocol="tb", a=a, phi=phi)
    residuals = check_energy_feasibility(params, traj, sched, rates)
    ok, violation = check_mobility(params, traj)
    return SolveReport(
        protocol="tb", scheme=scheme, objective=obj,
        objective_history=history, a=a, phi=phi, trajectory=traj, rates=rates,
        energy_residuals=residuals, mobility_ok=ok,
        mobility_violation=violation, converged=converged,
        n_iterations=len(history),
        wall_time_s=time.perf_counter() - t_start,
        status=STATUS_CONVERGED if converged else STATUS_MAX_ITERS,
        notes=notes)
