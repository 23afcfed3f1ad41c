"""Scenario parameters, geometry, energy accounting and feasibility checks.

All quantities are stored in linear SI units (W, m, s); dB-specified inputs
must be converted with :func:`db_to_linear` before construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Single global tolerance for energy residuals and mobility checks.
FEASIBILITY_TOL = 1e-9

TB = "tb"
TBR = "tbr"

#: slots per protocol block: harvest+backscatter (TB), +relay-forward (TBR)
SLOTS_PER_BLOCK = {TB: 2, TBR: 3}


def db_to_linear(value_db: float) -> float:
    """Convert a dB quantity to linear scale, 10^(dB/10)."""
    return 10.0 ** (value_db / 10.0)


def _as_point(p) -> np.ndarray:
    q = np.array(p, dtype=float).reshape(2)
    q.setflags(write=False)
    return q


@dataclass(frozen=True)
class ScenarioParams:
    """Immutable bundle of all physical constants and node positions.

    ``protocol`` selects the slot pattern (``"tb"`` or ``"tbr"``) and the
    matching slot-count divisibility rule.  ``mu == 0`` selects the static
    circuit model (draw ``p_c`` per backscatter slot); ``mu > 0`` selects the
    dynamic model (draw ``p_eps + mu * rate``).
    """

    beta0: float = 1e-3            # channel power gain at 1 m reference
    sigma_r2: float = 1e-9         # receiver noise power (W)
    sigma_u2: float = 1e-9         # UAV noise power (W)
    p_tx: float = 1.0              # UAV transmit power (W)
    altitude_h: float = 10.0       # fixed flight altitude (m)
    v_max: float = 20.0            # maximum horizontal speed (m/s)
    period_t: float = 2.0          # flight period (s)
    n_slots: int = 50              # number of equal time slots
    eta: float = 0.9               # energy harvesting efficiency
    p_eps: float = 2e-6            # static part of the dynamic circuit draw (W)
    mu: float = 0.0                # dynamic circuit weight (W per bps/Hz)
    p_c: float = 1e-5              # static-model circuit draw (W)
    m_exp: float = 3.0             # BD-receiver path loss exponent
    rician_k: float = 10 ** 1.5    # Rician factor (linear)
    w_b: np.ndarray = field(default_factory=lambda: _as_point((5.0, 0.0)))
    w_r: np.ndarray = field(default_factory=lambda: _as_point((15.0, 0.0)))
    q_init: np.ndarray = field(default_factory=lambda: _as_point((0.0, 10.0)))
    q_final: np.ndarray = field(default_factory=lambda: _as_point((20.0, 10.0)))
    protocol: str = TB
    delta: float | None = None     # slot duration; defaults to period_t/n_slots

    def __post_init__(self):
        for name in ("w_b", "w_r", "q_init", "q_final"):
            object.__setattr__(self, name, _as_point(getattr(self, name)))
        if self.delta is None:
            object.__setattr__(self, "delta", self.period_t / self.n_slots)
        self.validate()

    def validate(self) -> None:
        p = self
        if p.protocol not in SLOTS_PER_BLOCK:
            raise ValueError(f"unknown protocol {p.protocol!r}")
        positive = {
            "beta0": p.beta0, "sigma_r2": p.sigma_r2, "sigma_u2": p.sigma_u2,
            "p_tx": p.p_tx, "altitude_h": p.altitude_h, "v_max": p.v_max,
            "period_t": p.period_t, "p_eps": p.p_eps, "p_c": p.p_c,
            "m_exp": p.m_exp, "delta": p.delta,
        }
        for name, value in positive.items():
            if not value > 0.0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if not 0.0 < p.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {p.eta}")
        if p.mu < 0.0:
            raise ValueError(f"mu must be nonnegative, got {p.mu}")
        if p.rician_k < 0.0:
            raise ValueError(f"rician_k must be nonnegative, got {p.rician_k}")
        if p.n_slots < 1:
            raise ValueError("n_slots must be positive")
        if not math.isclose(p.delta * p.n_slots, p.period_t, rel_tol=1e-12):
            raise ValueError(
                f"delta * n_slots = {p.delta * p.n_slots} does not equal "
                f"period_t = {p.period_t}")
        k = SLOTS_PER_BLOCK[p.protocol]
        if p.n_slots % k != 0:
            rule = "even" if k == 2 else "divisible by 3"
            raise ValueError(
                f"n_slots must be {rule} for protocol {p.protocol!r}, "
                f"got {p.n_slots}")
        span = float(np.linalg.norm(p.q_init - p.q_final))
        if span > p.v_max * p.period_t + FEASIBILITY_TOL:
            raise ValueError(
                f"endpoints {span:.6g} m apart exceed reachable distance "
                f"{p.v_max * p.period_t:.6g} m; no feasible trajectory")

    @property
    def n_blocks(self) -> int:
        return self.n_slots // SLOTS_PER_BLOCK[self.protocol]

    def harvest_slots(self) -> np.ndarray:
        """1-based slot indices in which the UAV transmits and the BD harvests."""
        k = SLOTS_PER_BLOCK[self.protocol]
        return np.arange(self.n_blocks) * k + 1

    def backscatter_slots(self) -> np.ndarray:
        """1-based slot indices in which the BD backscatters."""
        k = SLOTS_PER_BLOCK[self.protocol]
        return np.arange(self.n_blocks) * k + 2

    def forward_slots(self) -> np.ndarray:
        """1-based slot indices in which the UAV relays (TBR only)."""
        if self.protocol != TBR:
            raise ValueError("forward slots exist only for the TBR protocol")
        return np.arange(self.n_blocks) * 3 + 3


@dataclass(frozen=True)
class Trajectory:
    """Discrete UAV path q_0..q_N; ``points[s]`` is the position in slot s."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (N+1, 2), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_steps(self) -> int:
        return self.points.shape[0] - 1

    def step_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def speeds(self, delta: float) -> np.ndarray:
        return self.step_lengths() / delta

    @staticmethod
    def straight_line(params: ScenarioParams) -> "Trajectory":
        frac = np.linspace(0.0, 1.0, params.n_slots + 1)[:, None]
        pts = params.q_init[None, :] * (1.0 - frac) + params.q_final[None, :] * frac
        return Trajectory(pts)


@dataclass(frozen=True)
class Schedule:
    """Per-block reflection coefficients ``a`` and backscatter fractions ``phi``."""

    protocol: str
    a: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        if self.protocol not in SLOTS_PER_BLOCK:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        for name in ("a", "phi"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if v.size and (v.min() < -FEASIBILITY_TOL or v.max() > 1.0 + FEASIBILITY_TOL):
                raise ValueError(f"{name} entries must lie in [0, 1]")
            v = np.clip(v, 0.0, 1.0)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.a.shape != self.phi.shape:
            raise ValueError("a and phi must have equal length")


def path_gain(params: ScenarioParams, q, w) -> float:
    """Large-scale channel power gain beta0 / (||q - w||^2 + H^2).

    Accepts single positions or arrays of shape (..., 2); broadcasts.
    """
    q = np.asarray(q, dtype=float)
    w = np.asarray(w, dtype=float)
    d2 = np.sum((q - w) ** 2, axis=-1)
    out = params.beta0 / (d2 + params.altitude_h ** 2)
    return float(out) if np.ndim(out) == 0 else out


def harvested_energy(params: ScenarioParams, a_n: float, theta_n) -> float:
    """Harvested power eta * (1 - a_n) * P * theta_n available to the circuit."""
    a = np.asarray(a_n, dtype=float)
    if np.any(a < -FEASIBILITY_TOL) or np.any(a > 1.0 + FEASIBILITY_TOL):
        raise ValueError(f"reflection coefficient outside [0, 1]: {a_n}")
    a = np.clip(a, 0.0, 1.0)
    out = params.eta * (1.0 - a) * params.p_tx * np.asarray(theta_n, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def circuit_power(params: ScenarioParams, rate) -> float:
    """Dynamic-model circuit draw p_eps + mu * rate (reduces to p_eps at mu=0)."""
    out = params.p_eps + params.mu * np.asarray(rate, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def effective_circuit_power(params: ScenarioParams, rate) -> np.ndarray:
    """Per-slot circuit draw under the scenario's model.

    The static model (mu == 0) draws the constant ``p_c``; the dynamic model
    draws ``p_eps + mu * rate``.
    """
    rate = np.asarray(rate, dtype=float)
    if params.mu == 0.0:
        return np.full_like(rate, params.p_c)
    return params.p_eps + params.mu * rate


def harvest_gains(params: ScenarioParams, traj: Trajectory) -> np.ndarray:
    """Path gains theta at the harvest-slot positions, one per block."""
    pts = traj.points[params.harvest_slots()]
    return path_gain(params, pts, params.w_b)


def check_energy_feasibility(params: ScenarioParams, traj: Trajectory,
                             sched: Schedule, rates) -> np.ndarray:
    """Cumulative harvested-minus-consumed energy margin for every prefix.

    ``rates[i]`` is the backscatter rate of block i (bps/Hz).  Entry n of the
    result is sum_{i<=n} harvest_i - sum_{i<=n} phi_i * p^e_i; the schedule is
    feasible iff all entries are >= -FEASIBILITY_TOL.
    """
    rates = np.asarray(rates, dtype=float).reshape(-1)
    k = params.n_blocks
    if sched.a.size != k or sched.phi.size != k or rates.size != k:
        raise ValueError(
            f"expected {k} blocks, got a:{sched.a.size} phi:{sched.phi.size} "
            f"rates:{rates.size}")
    if traj.n_steps != params.n_slots:
        raise ValueError(
            f"trajectory has {traj.n_steps} steps, scenario has "
            f"{params.n_slots} slots")
    theta = harvest_gains(params, traj)
    harvested = harvested_energy(params, sched.a, theta)
    consumed = sched.phi * effective_circuit_power(params, rates)
    return np.cumsum(harvested - consumed)


def check_mobility(params: ScenarioParams, traj: Trajectory):
    """Return (ok, max_violation) for the speed and endpoint constraints."""
    if traj.n_steps != params.n_slots:
        return False, float("inf")
    step_excess = traj.step_lengths() - params.v_max * params.delta
    end_err = max(
        float(np.linalg.norm(traj.points[0] - params.q_init)),
        float(np.linalg.norm(traj.points[-1] - params.q_final)),
    )
    violation = max(float(step_excess.max(initial=0.0)), end_err)
    return violation <= FEASIBILITY_TOL, violation
