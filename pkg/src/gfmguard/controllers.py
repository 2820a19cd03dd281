"""Terminal-voltage controllers: DADS backstepping and the cascaded PI baseline.

The DADS-BS law is an outer backstepping voltage loop producing reference
terminal currents, and an inner current loop that cancels the known matched
terms and injects nonlinear damping whose gain ``exp(z)`` is adapted only while
the error energy ``W`` sits above the deadzone threshold ``epsilon``.

Neither controller reads the line parameters ``R`` and ``L``: only the
PCC-side subset ``omega_b, C_f, L_f, R_f`` is passed in via :class:`KnownParams`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .frames import Vec2
from .plant import PhysicalParams, PlantState
from .power_droop import DroopParams

# exp() overflows just above 709.78
Z_MAX = 700.0


class GainBlowUpError(FloatingPointError):
    """An adaptive gain left the representable range (mis-tuned Gamma or epsilon)."""


class KnownParams(NamedTuple):
    """The physical parameters a controller is allowed to see."""

    omega_b: float
    C_f: float
    L_f: float
    R_f: float

    @classmethod
    def from_physical(cls, phys: PhysicalParams) -> "KnownParams":
        return cls(phys.omega_b, phys.C_f, phys.L_f, phys.R_f)


@dataclass(frozen=True)
class DadsParams:
    K_VC: float = 10.0
    K_CC: float = 10.0
    mu_d: float = 1.0
    mu_q: float = 1.0
    Gamma_d: float = 1e6
    Gamma_q: float = 1e6
    epsilon: float = 1e-4

    def __post_init__(self):
        for name in ("K_VC", "K_CC", "mu_d", "mu_q", "Gamma_d", "Gamma_q", "epsilon"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"DadsParams.{name} must be > 0, got {getattr(self, name)!r}")

    @property
    def decay_rate(self) -> float:
        return min(self.K_VC, self.K_CC)


class AdaptiveState(NamedTuple):
    z_d: float = 0.0
    z_q: float = 0.0


@dataclass(frozen=True)
class PiParams:
    """Cascaded PI gains.

    No numeric gains accompany the PI baseline in the source material. The
    defaults put the inner current loop (``omega_b*Kp_cc/L_f`` ~ 7.5e3 rad/s) a
    decade above the outer voltage loop (``omega_b*Kp_vc/C_f`` ~ 7.5e2 rad/s),
    with unit feedforward in both loops.
    """

    Kp_cc: float = 1.0
    Ki_cc: float = 20.0
    Kf_cc: float = 1.0
    Kp_vc: float = 0.6
    Ki_vc: float = 30.0
    Kf_vc: float = 1.0

    def __post_init__(self):
        for name in ("Kp_cc", "Ki_cc", "Kf_cc", "Kp_vc", "Ki_vc", "Kf_vc"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"PiParams.{name} must be finite")


class PiState(NamedTuple):
    gamma_d: float = 0.0
    gamma_q: float = 0.0
    beta_d: float = 0.0
    beta_q: float = 0.0


@dataclass(frozen=True)
class ControlOutput:
    v_t_nominal: Vec2
    W_d: float
    W_q: float
    i_t_ref: Vec2
    aux_derivatives: tuple[tuple[str, float], ...] = field(default=())


def guarded_exp(z: float) -> float:
    if not z <= Z_MAX:
        raise GainBlowUpError(f"adaptive gain z={z!r} exceeds {Z_MAX}; reduce Gamma or raise epsilon")
    return math.exp(z)


def adaptation_derivative(z: float, W: float, Gamma: float, epsilon: float) -> float:
    """Deadzone adaptation: ``Gamma * exp(-z) * max(W - epsilon, 0)``."""
    excess = W - epsilon
    if excess <= 0.0:
        return 0.0
    return Gamma * math.exp(-z) * excess


def dads_reference_currents(
    x: PlantState, omega: float, v_ref: tuple[float, float], params: DadsParams, K_Q: float, known: KnownParams
) -> Vec2:
    """Outer-loop (virtual control) reference terminal currents."""
    wb, Cf = known.omega_b, known.C_f
    kv = Cf * params.K_VC / wb
    itd_r = x.igd - Cf * omega * x.vcq - Cf * K_Q / wb * x.q2 - kv * (x.vcd - v_ref[0])
    itq_r = x.igq + Cf * omega * x.vcd - kv * x.vcq
    return Vec2(itd_r, itq_r)


def dads_control(
    x: PlantState,
    z: AdaptiveState,
    omega: float,
    v_ref: tuple[float, float],
    q_sat: float,
    params: DadsParams,
    droop: DroopParams,
    known: KnownParams,
) -> ControlOutput:
    wb, Cf, Lf, Rf = known
    Kvc, Kcc, K_Q, K_P = params.K_VC, params.K_CC, droop.K_Q, droop.K_P
    vcd, vcq, itd, itq, igd, igq, q1, q2, _, p2 = x

    i_ref = dads_reference_currents(x, omega, v_ref, params, K_Q, known)
    ev_d = vcd - v_ref[0]
    ei_d = itd - i_ref.a
    ei_q = itq - i_ref.b

    damp_d = Kcc + (1.0 + guarded_exp(z.z_d)) * wb * wb / (4.0 * params.mu_d) * (1.0 + igd * igd + vcd * vcd)
    damp_q = Kcc + (1.0 + guarded_exp(z.z_q)) * wb * wb / (4.0 * params.mu_q) * (1.0 + igq * igq + vcq * vcq)
    u_d = -damp_d * ei_d - wb / Cf * ev_d
    u_q = -damp_q * ei_q - wb / Cf * vcq

    wq = droop.omega_qc
    vtd = (Lf / wb) * (
        -2.0 * wb * omega * (itq - igq)
        + wb * Rf / Lf * itd
        + wb * (1.0 / Lf + omega * omega * Cf) * vcd
        + Cf * K_P * p2 * vcq
        - Kvc * ei_d
        + Cf * Kvc * Kvc / wb * ev_d
        + 2.0 * droop.xi_q * wq * K_Q * Cf / wb * q2
        + wq * wq * K_Q * Cf / wb * (q1 - q_sat)
        + u_d
    )
    vtq = (Lf / wb) * (
        2.0 * wb * omega * (itd - igd)
        + wb * Rf / Lf * itq
        + wb * (1.0 / Lf + Cf * omega * omega + Cf * Kvc * Kvc / (wb * wb)) * vcq
        - Cf * K_P * p2 * vcd
        - Kvc * ei_q
        + u_q
    )

    W_d = 0.5 * ev_d * ev_d + 0.5 * ei_d * ei_d
    W_q = 0.5 * vcq * vcq + 0.5 * ei_q * ei_q
    aux = (
        ("z_d", adaptation_derivative(z.z_d, W_d, params.Gamma_d, params.epsilon)),
        ("z_q", adaptation_derivative(z.z_q, W_q, params.Gamma_q, params.epsilon)),
    )
    return ControlOutput(Vec2(vtd, vtq), W_d, W_q, i_ref, aux)


def pi_control(
    x: PlantState,
    pi: PiState,
    omega: float,
    v_ref: tuple[float, float],
    params: PiParams,
    known: KnownParams,
) -> ControlOutput:
    """Cascaded PI voltage/current loops with decoupling and feedforward.

    ``W_d`` and ``W_q`` are reported with the same error-energy definitions as
    the DADS controller so trajectories of both controllers are comparable.
    """
    Cf, Lf = known.C_f, known.L_f
    vcd, vcq, itd, itq, igd, igq = x[:6]
    ev_d = vcd - v_ref[0]
    ev_q = vcq - v_ref[1]

    itd_r = -params.Kp_vc * ev_d - params.Ki_vc * pi.beta_d + params.Kf_vc * igd - omega * Cf * vcq
    itq_r = -params.Kp_vc * ev_q - params.Ki_vc * pi.beta_q + params.Kf_vc * igq + omega * Cf * vcd
    ei_d = itd - itd_r
    ei_q = itq - itq_r
    vtd = -params.Kp_cc * ei_d - params.Ki_cc * pi.gamma_d + params.Kf_cc * vcd - omega * Lf * itq
    vtq = -params.Kp_cc * ei_q - params.Ki_cc * pi.gamma_q + params.Kf_cc * vcq + omega * Lf * itd

    aux = (("gamma_d", ei_d), ("gamma_q", ei_q), ("beta_d", ev_d), ("beta_q", vcq))
    return ControlOutput(
        Vec2(vtd, vtq),
        0.5 * ev_d * ev_d + 0.5 * ei_d * ei_d,
        0.5 * vcq * vcq + 0.5 * ei_q * ei_q,
        Vec2(itd_r, itq_r),
        aux,
    )
