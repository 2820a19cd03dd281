"""CBF terminal-current limiter.

The barrier ``h = I_max**2 - |i_t|**2`` is kept non-negative by enforcing
``dh/dt >= -c h``. The constraint is affine in the terminal voltage, so the
minimal-deviation QP has a closed-form solution: project the nominal command
onto the half-space along ``i_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .controllers import KnownParams
from .frames import Vec2
from .plant import PlantState

# Squared-norm floor for the projection; eta > 0 near i_t = 0 so this is never hit in practice.
_TINY_NORM2 = 1e-30


@dataclass(frozen=True)
class SafetyParams:
    I_max: float = 1.2
    c: float = 1e9
    enabled: bool = False

    def __post_init__(self):
        if not self.I_max > 0.0:
            raise ValueError("I_max must be > 0")
        if not self.c > 0.0:
            raise ValueError("c must be > 0")


class SafetyDecision(NamedTuple):
    v_t_applied: Vec2
    eta: float
    h: float
    active: bool


def barrier(i_t: tuple[float, float], I_max: float) -> float:
    itd, itq = i_t
    return I_max * I_max - itd * itd - itq * itq


def eta(
    x: PlantState, omega: float, v_t_nominal: tuple[float, float], params: SafetyParams, known: KnownParams
) -> float:
    """Constraint margin of the nominal command; the nominal is admissible iff ``eta >= 0``.

    ``omega`` is accepted for signature symmetry: the rotation part of the
    current dynamics is skew and drops out of ``i_t' A i_t``.
    """
    k = 2.0 * known.omega_b / known.L_f
    itd, itq = x.itd, x.itq
    n2 = itd * itd + itq * itq
    drift = k * known.R_f * n2 + k * (itd * x.vcd + itq * x.vcq) - k * (itd * v_t_nominal[0] + itq * v_t_nominal[1])
    return drift + params.c * (params.I_max * params.I_max - n2)


def apply_filter(
    x: PlantState,
    omega: float,
    v_t_nominal: tuple[float, float],
    params: SafetyParams,
    known: KnownParams,
    force: bool | None = None,
) -> SafetyDecision:
    """Minimal-deviation admissible terminal voltage.

    ``force`` pins the branch (True: projection formula, False: nominal)
    regardless of the sign of ``eta``; a simulator uses it to keep the vector
    field smooth between located switching instants. Both branches agree at
    ``eta = 0``, so the pinned field is a smooth continuation.
    """
    h = barrier((x.itd, x.itq), params.I_max)
    e = eta(x, omega, v_t_nominal, params, known)
    n2 = x.itd * x.itd + x.itq * x.itq
    on = e < 0.0 if force is None else force
    if not params.enabled or not on or n2 <= _TINY_NORM2:
        return SafetyDecision(Vec2(*v_t_nominal), e, h, False)
    gain = known.L_f / (2.0 * known.omega_b) * e / max(n2, _TINY_NORM2)
    return SafetyDecision(Vec2(v_t_nominal[0] + gain * x.itd, v_t_nominal[1] + gain * x.itq), e, h, True)


@dataclass
class SafetyEventLog:
    """ON episodes of the filter, built from a time-ordered activity trace.

    An episode that is still open is stored with ``t_off = None``; it counts
    toward ``N_eta`` and contributes its elapsed time to ``T_eta``.
    """

    episodes: list[tuple[float, float | None]] = field(default_factory=list)
    t_last: float | None = None

    @property
    def is_on(self) -> bool:
        return bool(self.episodes) and self.episodes[-1][1] is None

    @property
    def N_eta(self) -> int:
        return len(self.episodes)

    @property
    def T_eta(self) -> float:
        total = 0.0
        for t_on, t_off in self.episodes:
            end = t_off if t_off is not None else self.t_last
            total += end - t_on
        return total

    def record(self, t: float, active: bool, t_switch: float | None = None) -> "SafetyEventLog":
        """Append one sample.

        ``t_switch`` optionally locates the ON/OFF transition inside the
        preceding interval (e.g. an interpolated zero crossing of eta);
        by default the transition is placed at ``t``.
        """
        if self.t_last is not None and t < self.t_last:
            raise ValueError(f"non-monotone time: {t} after {self.t_last}")
        ts = t if t_switch is None else t_switch
        if active and not self.is_on:
            self.episodes.append((ts, None))
        elif not active and self.is_on:
            self.episodes[-1] = (self.episodes[-1][0], ts)
        self.t_last = t
        return self


def record_eta(log: SafetyEventLog, t: float, active: bool, t_switch: float | None = None) -> SafetyEventLog:
    return log.record(t, active, t_switch)
