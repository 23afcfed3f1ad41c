"""First-order tangent bounds used by the successive convex approximation.

Every bound is affine in its own variable, exact at the expansion point, and
one-sided everywhere: tangents of concave functions bound from above, tangents
of convex functions bound from below.  All factories broadcast over numpy
arrays, so a whole block of expansion points can be built at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rates import TbLinkConstants
from .scenario import ScenarioParams

LN2 = math.log(2.0)


@dataclass(frozen=True)
class AffineBound:
    """value + slope * (x - expansion); tight at the expansion point."""

    expansion: np.ndarray
    value: np.ndarray
    slope: np.ndarray

    def __call__(self, x):
        return self.value + self.slope * (np.asarray(x, dtype=float) - self.expansion)


def reflection_rate_upper(params: ScenarioParams, consts: TbLinkConstants,
                          u, a_ref) -> AffineBound:
    """Tangent in the reflection coefficient of the direct-link rate.

    The rate log2(1 + w_br*a/(u + H^2)) is concave in a, so the tangent at
    ``a_ref`` upper-bounds it on [0, 1]; ``u`` is the squared horizontal
    UAV-BD distance, held fixed.
    """
    u = np.asarray(u, dtype=float)
    a_ref = np.asarray(a_ref, dtype=float)
    d = u + params.altitude_h ** 2
    value = np.log2(1.0 + consts.w_br * a_ref / d)
    slope = consts.w_br / (LN2 * (d + consts.w_br * a_ref))
    return AffineBound(expansion=a_ref, value=value, slope=slope)


def trajectory_rate_lower(params: ScenarioParams, consts: TbLinkConstants,
                          u_ref, a) -> AffineBound:
    """Tangent in u = ||q - w_b||^2 of the direct-link rate (convex in u)."""
    u_ref = np.asarray(u_ref, dtype=float)
    a = np.asarray(a, dtype=float)
    d = u_ref + params.altitude_h ** 2
    wa = consts.w_br * a
    value = np.log2(1.0 + wa / d)
    slope = -wa / (LN2 * d * (wa + d))
    return AffineBound(expansion=u_ref, value=value, slope=slope)


def gain_lower(params: ScenarioParams, u_ref) -> AffineBound:
    """Tangent in u of the UAV-BD gain beta0/(u + H^2) (convex in u)."""
    u_ref = np.asarray(u_ref, dtype=float)
    d = u_ref + params.altitude_h ** 2
    return AffineBound(expansion=u_ref, value=params.beta0 / d,
                       slope=-params.beta0 / d ** 2)


def tbr_reflection_rate_upper(params: ScenarioParams, u_bs, a_ref) -> AffineBound:
    """Tangent in a of the relayed uplink rate log2(1 + P*a*theta^2/sigma_u^2)."""
    u_bs = np.asarray(u_bs, dtype=float)
    a_ref = np.asarray(a_ref, dtype=float)
    theta = params.beta0 / (u_bs + params.altitude_h ** 2)
    g = params.p_tx * theta ** 2 / params.sigma_u2
    value = np.log2(1.0 + g * a_ref)
    slope = g / (LN2 * (1.0 + g * a_ref))
    return AffineBound(expansion=a_ref, value=value, slope=slope)


def uplink_rate_lower_in_t(params: ScenarioParams, a, t_ref) -> AffineBound:
    """Tangent in t of log2(1 + C/t^2) with C = P*a*beta0^2/sigma_u^2.

    The function is convex and decreasing for t > 0, so the tangent at
    ``t_ref`` is a global lower bound; t stands for ||q - w_b||^2 + H^2.
    """
    a = np.asarray(a, dtype=float)
    t_ref = np.asarray(t_ref, dtype=float)
    c = params.p_tx * a * params.beta0 ** 2 / params.sigma_u2
    value = np.log2(1.0 + c / t_ref ** 2)
    slope = -2.0 * c / (LN2 * t_ref * (t_ref ** 2 + c))
    return AffineBound(expansion=t_ref, value=value, slope=slope)
