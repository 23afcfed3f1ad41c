"""Closed-form expected-rate approximations and the Monte Carlo rate oracle.

The closed forms are deterministic functions of geometry and the reflection
coefficient; the Monte Carlo oracle draws the full fading model (Rician
UAV-ground links, exponential BD-receiver link) and averages the exact
per-realization rate, so it serves as the independent reference for the
approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import FEASIBILITY_TOL, ScenarioParams, path_gain

#: Euler-Mascheroni constant; enters through E[ln xi] = -kappa0 for xi ~ Exp(1).
KAPPA0 = float(np.euler_gamma)

MC_DEFAULT_SAMPLES = 100_000

TB_DIRECT = "tb"
TBR_UPLINK = "tbr_uplink"
TBR_DOWNLINK = "tbr_downlink"


@dataclass(frozen=True)
class TbLinkConstants:
    """Composite constant of the direct-link rate approximation.

    ``w_br = exp(-kappa0) * P * beta0 * d_br^(-m) / sigma_r^2`` where d_br is
    the BD-receiver distance; the BD-receiver link itself is exponential with
    rate parameter d_br^m.
    """

    w_br: float
    kappa0: float
    d_br: float

    def __post_init__(self):
        if not (self.w_br > 0.0 and self.d_br > 0.0):
            raise ValueError("w_br and d_br must be strictly positive")


def bd_receiver_distance(params: ScenarioParams) -> float:
    return float(np.linalg.norm(params.w_b - params.w_r))


def bd_receiver_mean_gain(params: ScenarioParams) -> float:
    """Mean BD-receiver power gain, 1/lambda_br with lambda_br = d_br^m."""
    return bd_receiver_distance(params) ** (-params.m_exp)


def tb_link_constants(params: ScenarioParams) -> TbLinkConstants:
    d_br = bd_receiver_distance(params)
    w_br = (math.exp(-KAPPA0) * params.p_tx * params.beta0
            * d_br ** (-params.m_exp) / params.sigma_r2)
    return TbLinkConstants(w_br=w_br, kappa0=KAPPA0, d_br=d_br)


def _check_reflection(a_n) -> np.ndarray:
    a = np.asarray(a_n, dtype=float)
    if np.any(a < -FEASIBILITY_TOL) or np.any(a > 1.0 + FEASIBILITY_TOL):
        raise ValueError(f"reflection coefficient outside [0, 1]: {a_n}")
    return np.clip(a, 0.0, 1.0)


def _maybe_scalar(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def tb_rate_approx(params: ScenarioParams, consts: TbLinkConstants, q, a_n):
    """Direct-link expected-rate approximation log2(1 + w_br*a/(||q-w_b||^2+H^2))."""
    a = _check_reflection(a_n)
    q = np.asarray(q, dtype=float)
    d2 = np.sum((q - params.w_b) ** 2, axis=-1)
    snr = consts.w_br * a / (d2 + params.altitude_h ** 2)
    return _maybe_scalar(np.log2(1.0 + snr))


def tbr_uplink_rate_approx(params: ScenarioParams, q, a_n):
    """BD-to-UAV expected-rate approximation log2(1 + P*a*theta^2/sigma_u^2).

    theta is squared because the backscattered signal traverses the UAV-BD
    link twice, with the two slots' gains treated as equal.
    """
    a = _check_reflection(a_n)
    theta = path_gain(params, q, params.w_b)
    snr = params.p_tx * a * np.asarray(theta) ** 2 / params.sigma_u2
    return _maybe_scalar(np.log2(1.0 + snr))


def tbr_downlink_rate_approx(params: ScenarioParams, q):
    """UAV-to-receiver expected-rate approximation log2(1 + P*theta_ur/sigma_r^2)."""
    theta = path_gain(params, q, params.w_r)
    snr = params.p_tx * np.asarray(theta) / params.sigma_r2
    return _maybe_scalar(np.log2(1.0 + snr))


@dataclass(frozen=True)
class ChannelSample:
    """One joint draw of the three link power gains."""

    h_ub: float
    h_ur: float
    h_br: float

    def __post_init__(self):
        if min(self.h_ub, self.h_ur, self.h_br) < 0.0:
            raise ValueError("channel power gains must be nonnegative")


def _rng(seed) -> np.random.Generator:
    # Philox is counter-based: sample i of a stream is a pure function of
    # (seed, i), which keeps draws reproducible under any chunking.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def rician_power(k: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """|h|^2 draws for a Rician fading amplitude with E[|h|^2] = 1."""
    los = math.sqrt(k / (k + 1.0))
    sigma = math.sqrt(1.0 / (2.0 * (k + 1.0)))
    re = los + sigma * rng.standard_normal(size)
    im = sigma * rng.standard_normal(size)
    return re * re + im * im


def draw_channel_samples(params: ScenarioParams, q, n: int, rng_seed):
    """Vectorized joint channel draws; returns (h_ub, h_ur, h_br) arrays."""
    rng = _rng(rng_seed)
    theta_ub = path_gain(params, q, params.w_b)
    theta_ur = path_gain(params, q, params.w_r)
    h_ub = theta_ub * rician_power(params.rician_k, n, rng)
    h_ur = theta_ur * rician_power(params.rician_k, n, rng)
    h_br = bd_receiver_mean_gain(params) * rng.exponential(1.0, n)
    return h_ub, h_ur, h_br


def sample_channel(params: ScenarioParams, q, rng_seed) -> ChannelSample:
    """Draw one ChannelSample; deterministic in (params, q, rng_seed)."""
    h_ub, h_ur, h_br = draw_channel_samples(params, q, 1, rng_seed)
    return ChannelSample(h_ub=float(h_ub[0]), h_ur=float(h_ur[0]),
                         h_br=float(h_br[0]))


def _mean_stderr(values: np.ndarray):
    # Exact (fsum) reduction: the result is independent of summation order.
    n = values.size
    total = math.fsum(values.tolist())
    mean = total / n
    if n < 2:
        return mean, 0.0
    sq = math.fsum(((values - mean) ** 2).tolist())
    return mean, math.sqrt(sq / (n - 1)) / math.sqrt(n)


def mc_expected_rate(params: ScenarioParams, protocol: str, q, a_n: float,
                     n_samples: int = MC_DEFAULT_SAMPLES, rng_seed=0):
    """Monte Carlo estimate of the exact expected rate at one geometry point.

    protocol is one of ``"tb"``, ``"tbr_uplink"``, ``"tbr_downlink"``.
    Returns (mean, standard_error); a deterministic function of
    (params, q, a_n, n_samples, rng_seed).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    a = float(_check_reflection(a_n))
    rng = _rng(rng_seed)
    if protocol == TB_DIRECT:
        if a == 0.0:
            return 0.0, 0.0
        theta_ub = path_gain(params, q, params.w_b)
        h_ub = theta_ub * rician_power(params.rician_k, n_samples, rng)
        h_br = bd_receiver_mean_gain(params) * rng.exponential(1.0, n_samples)
        snr = params.p_tx * a * h_br * h_ub / params.sigma_r2
    elif protocol == TBR_UPLINK:
        if a == 0.0:
            return 0.0, 0.0
        theta_ub = path_gain(params, q, params.w_b)
        # Two-hop product: independent fades of the consecutive slots, taken
        # at the same geometry point.
        g1 = rician_power(params.rician_k, n_samples, rng)
        g2 = rician_power(params.rician_k, n_samples, rng)
        snr = params.p_tx * a * (theta_ub ** 2) * g1 * g2 / params.sigma_u2
    elif protocol == TBR_DOWNLINK:
        theta_ur = path_gain(params, q, params.w_r)
        g = rician_power(params.rician_k, n_samples, rng)
        snr = params.p_tx * theta_ur * g / params.sigma_r2
    else:
        raise ValueError(f"unknown MC protocol {protocol!r}")
    return _mean_stderr(np.log2(1.0 + snr))
