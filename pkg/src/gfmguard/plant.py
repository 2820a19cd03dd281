"""Inverter / LC filter / RL line circuit dynamics in the inverter's local dq frame.

Everything is per-unit except ``omega_b`` (rad/s) and time (s).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .frames import Vec2


@dataclass(frozen=True)
class PhysicalParams:
    omega_b: float = 120.0 * 3.141592653589793
    C_f: float = 0.30
    L_f: float = 0.05
    R_f: float = 7.2e-3
    L: float = 0.8
    R: float = 0.2

    def __post_init__(self):
        for name in ("omega_b", "C_f", "L_f", "R_f", "L", "R"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"PhysicalParams.{name} must be > 0, got {getattr(self, name)!r}")


class InverterState(NamedTuple):
    vcd: float
    vcq: float
    itd: float
    itq: float
    igd: float
    igq: float

    @property
    def v_c(self) -> Vec2:
        return Vec2(self.vcd, self.vcq)

    @property
    def i_t(self) -> Vec2:
        return Vec2(self.itd, self.itq)

    @property
    def i_g(self) -> Vec2:
        return Vec2(self.igd, self.igq)


class PlantState(NamedTuple):
    """Electrical states followed by the two second-order power-filter states."""

    vcd: float
    vcq: float
    itd: float
    itq: float
    igd: float
    igq: float
    q1: float
    q2: float
    p1: float
    p2: float

    @property
    def inverter(self) -> InverterState:
        return InverterState(*self[:6])

    v_c = InverterState.v_c
    i_t = InverterState.i_t
    i_g = InverterState.i_g


def plant_derivative(
    inv: InverterState | PlantState,
    omega: float,
    v_t: tuple[float, float],
    v_g_dq: tuple[float, float],
    params: PhysicalParams,
) -> InverterState:
    """Time derivatives of the six electrical states.

    ``v_g_dq`` must already be expressed in the local frame. ``params`` carries
    the true line ``R, L``; this is the simulator's view of the network.
    """
    wb = params.omega_b
    w = wb * omega
    vtd, vtq = v_t
    vgd, vgq = v_g_dq
    kc = wb / params.C_f
    kf = wb / params.L_f
    rf = wb * params.R_f / params.L_f
    kl = wb / params.L
    rl = wb * params.R / params.L
    vcd, vcq, itd, itq, igd, igq = inv[:6]
    return InverterState(
        w * vcq + kc * (itd - igd),
        -w * vcd + kc * (itq - igq),
        w * itq + kf * (vtd - vcd) - rf * itd,
        -w * itd + kf * (vtq - vcq) - rf * itq,
        w * igq + kl * (vcd - vgd) - rl * igd,
        -w * igd + kl * (vcq - vgq) - rl * igq,
    )
