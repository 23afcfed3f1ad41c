"""Solver configuration and the result record shared by both protocols."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import ScenarioParams, Trajectory

PROPOSED = "proposed"
HF = "hf"
SF = "sf"

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max_iterations"


@dataclass(frozen=True)
class SolveConfig:
    """Tolerances and iteration budgets of the alternating optimization."""

    bcd_tol: float = 1e-3          # fractional objective increase threshold
    max_outer_iters: int = 50
    inner_tol: float = 1e-5        # relative tolerance of each SCA loop
    max_inner_iters: int = 8
    scp_tol: float = 1e-8
    dual_tol: float = 1e-7
    dual_max_iters: int = 5000
    dual_step: float = 0.01
    init_reflection: float = 0.5
    energy_mode: str = "cumulative"   # "per_slot" selects the H-F constraint
    optimize_trajectory: bool = True  # False pins the straight line (S-F)

    def __post_init__(self):
        for name in ("bcd_tol", "inner_tol", "scp_tol", "dual_tol", "dual_step"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.init_reflection <= 1.0:
            raise ValueError("init_reflection must lie in [0, 1]")


@dataclass
class SolveReport:
    """Outcome of one alternating solve: history, final point, diagnostics."""

    protocol: str
    scheme: str
    objective: float
    objective_history: list
    a: np.ndarray
    phi: np.ndarray
    trajectory: Trajectory
    rates: np.ndarray
    energy_residuals: np.ndarray
    mobility_ok: bool
    mobility_violation: float
    converged: bool
    n_iterations: int
    wall_time_s: float
    status: str
    causality_margins: np.ndarray | None = None
    downlink_rates: np.ndarray | None = None
    notes: dict = field(default_factory=dict)

    def summary(self) -> str:
        parts = [
            f"{self.protocol}/{self.scheme}",
            f"objective={self.objective:.6g} bps/Hz",
            f"iters={self.n_iterations}",
            self.status,
        ]
        return " ".join(parts)


def block_slot_table(params: ScenarioParams, report: SolveReport):
    """Rows (slot, t_seconds, q_x, q_y, a, phi, rate[, margin]) for all slots.

    ``a`` is populated on harvest slots, ``phi`` and ``rate`` on backscatter
    slots; other entries are None.
    """
    pts = report.trajectory.points
    harvest = set(int(s) for s in params.harvest_slots())
    backscatter = {int(s): i for i, s in enumerate(params.backscatter_slots())}
    harvest_ix = {int(s): i for i, s in enumerate(params.harvest_slots())}
    rows = []
    for slot in range(1, params.n_slots + 1):
        row = {
            "slot": slot,
            "t_seconds": slot * params.delta,
            "q_x": pts[slot, 0],
            "q_y": pts[slot, 1],
            "a": report.a[harvest_ix[slot]] if slot in harvest else None,
            "phi": report.phi[backscatter[slot]] if slot in backscatter else None,
            "rate": report.rates[backscatter[slot]] if slot in backscatter else None,
        }
        if report.causality_margins is not None:
            block = (slot - 1) // 3
            row["causality_margin"] = (
                report.causality_margins[block] if slot % 3 == 0 else None)
        rows.append(row)
    return rows
