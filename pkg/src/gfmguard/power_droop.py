"""PCC power measurement, saturated second-order power filters and droop laws."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .frames import Vec2


@dataclass(frozen=True)
class DroopParams:
    V0: float = 1.0
    omega0: float = 1.0
    P0: float = 1.0
    Q0: float = 0.5
    K_P: float = 5e-3
    K_Q: float = 1e-4
    xi_p: float = 1.2
    xi_q: float = 1.2
    omega_pc: float = 332.8
    omega_qc: float = 732.8
    # Q_bar is not reported with the published parameter set; 1.5 p.u. is our choice.
    P_bar: float = math.inf
    Q_bar: float = 1.5

    def __post_init__(self):
        if not (self.xi_p > 1.0 and self.xi_q > 1.0):
            raise ValueError("filter damping ratios xi_p, xi_q must exceed 1")
        if not (self.omega_pc > 0.0 and self.omega_qc > 0.0):
            raise ValueError("filter corner frequencies must be positive")
        if not (self.P_bar > 0.0 and self.Q_bar > 0.0):
            raise ValueError("saturation limits P_bar, Q_bar must be positive (inf allowed)")


class FilterDerivative(NamedTuple):
    dq1: float
    dq2: float
    dp1: float
    dp2: float


def instantaneous_power(v_c: tuple[float, float], i_g: tuple[float, float]) -> tuple[float, float]:
    """Active and reactive power injected at the PCC, ``(p, q)``."""
    vd, vq = v_c
    id_, iq = i_g
    return vd * id_ + vq * iq, vq * id_ - vd * iq


def saturate(limit: float, y: float) -> float:
    if y > limit:
        return limit
    if y < -limit:
        return -limit
    return y


def power_filter_derivative(
    q1: float, q2: float, p1: float, p2: float, p: float, q: float, params: DroopParams
) -> FilterDerivative:
    wq, wp = params.omega_qc, params.omega_pc
    return FilterDerivative(
        q2,
        -2.0 * params.xi_q * wq * q2 - wq * wq * (q1 - saturate(params.Q_bar, q)),
        p2,
        -2.0 * params.xi_p * wp * p2 - wp * wp * (p1 - saturate(params.P_bar, p)),
    )


def droop_voltage_ref(q1: float, params: DroopParams) -> Vec2:
    """PCC voltage reference; the q-axis reference is identically zero."""
    return Vec2(params.V0 + params.K_Q * (params.Q0 - q1), 0.0)


def droop_frequency(p1: float, params: DroopParams) -> float:
    return params.omega0 + params.K_P * (params.P0 - p1)
