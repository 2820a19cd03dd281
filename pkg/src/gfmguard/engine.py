"""Closed-loop simulation: plant, droop, controller, safety filter.

The augmented state vector is laid out as

    [vcd, vcq, itd, itq, igd, igq, q1, q2, p1, p2, theta, <controller states>]

with controller states ``z_d, z_q`` (DADS) or ``gamma_d, gamma_q, beta_d,
beta_q`` (PI). Integration restarts at every grid-voltage step so the solver
never steps across a discontinuity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
from scipy.optimize import brentq

from .config import ConfigError, ScenarioConfig
from .controllers import (
    AdaptiveState,
    GainBlowUpError,
    KnownParams,
    PiState,
    dads_control,
    pi_control,
)
from .frames import Vec2, rotate_to_local, theta_derivative
from .integrators import IntegrationError, NonFiniteState, dopri5, radau5
from .plant import PlantState, plant_derivative
from .power_droop import (
    droop_frequency,
    droop_voltage_ref,
    instantaneous_power,
    power_filter_derivative,
    saturate,
)
from .safety import SafetyEventLog, apply_filter

PLANT_NAMES = ("vcd", "vcq", "itd", "itq", "igd", "igq", "q1", "q2", "p1", "p2")
THETA = 10
CTRL = 11

SIGNAL_NAMES = (
    "p", "q", "omega", "v_ref_d", "W_d", "W_q", "eta", "h", "filter_active",
    "v_t_d", "v_t_q", "v_t_nominal_d", "v_t_nominal_q", "v_g_d", "v_g_q",
)


class IntegrationAbort(RuntimeError):
    """The closed loop could not be integrated to ``t_end``."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class AugmentedState(NamedTuple):
    plant: PlantState
    theta: float
    controller: AdaptiveState | PiState

    def to_array(self) -> np.ndarray:
        return np.array([*self.plant, self.theta, *self.controller], dtype=float)

    @classmethod
    def from_array(cls, y, controller: str = "dads") -> "AugmentedState":
        ctrl = AdaptiveState(*y[CTRL:CTRL + 2]) if controller == "dads" else PiState(*y[CTRL:CTRL + 4])
        return cls(PlantState(*y[:10]), float(y[THETA]), ctrl)


def state_names(cfg: ScenarioConfig) -> tuple[str, ...]:
    return (*PLANT_NAMES, "theta", *cfg.controller_states)


def grid_voltage(t: float, cfg: ScenarioConfig) -> Vec2:
    """Grid voltage in the DQ frame; a step applies from its start time onwards."""
    current = cfg.grid.steps[0]
    for row in cfg.grid.steps[1:]:
        if t >= row[0]:
            current = row
        else:
            break
    return Vec2(current[1], current[2])


class _Eval(NamedTuple):
    deriv: np.ndarray
    p: float
    q: float
    omega: float
    v_ref: Vec2
    W_d: float
    W_q: float
    eta: float
    h: float
    active: bool
    v_t: Vec2
    v_t_nominal: Vec2
    v_g: Vec2


class ClosedLoop:
    """Vector field of one scenario, with parameters unpacked once."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.known = KnownParams.from_physical(cfg.physical)
        self.n = CTRL + len(cfg.controller_states)

    def evaluate(self, t: float, y, v_g_dq: Vec2 | None = None, filter_mode: bool | None = None) -> _Eval:
        cfg = self.cfg
        droop = cfg.droop
        x = PlantState(*y[:10])
        theta = y[THETA]
        # grid -> local frame -> measured power -> droop -> controller -> filter -> derivatives
        vg = rotate_to_local(theta, grid_voltage(t, cfg) if v_g_dq is None else v_g_dq)
        p, q = instantaneous_power((x.vcd, x.vcq), (x.igd, x.igq))
        omega = droop_frequency(x.p1, droop)
        v_ref = droop_voltage_ref(x.q1, droop)
        if cfg.controller == "dads":
            out = dads_control(
                x, AdaptiveState(y[CTRL], y[CTRL + 1]), omega, v_ref,
                saturate(droop.Q_bar, q), cfg.dads, droop, self.known,
            )
        else:
            out = pi_control(x, PiState(*y[CTRL:CTRL + 4]), omega, v_ref, cfg.pi, self.known)
        dec = apply_filter(x, omega, out.v_t_nominal, cfg.safety, self.known, force=filter_mode)

        d = np.empty(self.n)
        d[:6] = plant_derivative(x, omega, dec.v_t_applied, vg, cfg.physical)
        d[6:10] = power_filter_derivative(x.q1, x.q2, x.p1, x.p2, p, q, droop)
        d[THETA] = theta_derivative(omega, droop.omega0, cfg.physical.omega_b)
        d[CTRL:] = [v for _, v in out.aux_derivatives]
        return _Eval(d, p, q, omega, v_ref, out.W_d, out.W_q, dec.eta, dec.h, dec.active,
                     dec.v_t_applied, out.v_t_nominal, vg)

    def rhs(self, t: float, y) -> np.ndarray:
        return self.evaluate(t, y).deriv

    def segment_rhs(self, v_g_dq: Vec2, filter_mode: bool | None = None):
        """Vector field with the grid voltage frozen for one constant-grid segment.

        Collocation stages touch the segment's right end point, where the
        profile has already switched; freezing the value keeps every stage on
        the same side of the discontinuity. ``filter_mode`` likewise pins the
        safety-filter branch between located switching instants. Newton trial
        iterates that push a gain out of range come back as NaN so the step is
        rejected, not aborted.
        """

        def f(t: float, y) -> np.ndarray:
            try:
                return self.evaluate(t, y, v_g_dq, filter_mode).deriv
            except (GainBlowUpError, OverflowError):
                return np.full(self.n, np.nan)

        return f


def closed_loop_rhs(s, t: float, cfg: ScenarioConfig) -> np.ndarray:
    return ClosedLoop(cfg).rhs(t, np.asarray(s, dtype=float))


# ---------------------------------------------------------------- initial state


def _operating_point(cfg: ScenarioConfig, v_g_dq: Vec2):
    """Sinusoidal steady state delivering ``P0`` at the droop voltage reference."""
    phys, droop = cfg.physical, cfg.droop
    vg_mag = math.hypot(*v_g_dq)
    if vg_mag == 0.0:
        raise ConfigError("steady initialisation needs a non-zero grid voltage at t = 0")
    phi = math.atan2(v_g_dq[1], v_g_dq[0])
    Z = complex(phys.R, phys.L)

    def flow(delta, V):
        vc = complex(V, 0.0)
        ig = (vc - vg_mag * complex(math.cos(delta), -math.sin(delta))) / Z
        s = vc * ig.conjugate()
        return s.real, s.imag, vc, ig

    # p(delta) peaks where delta equals the line impedance angle
    delta_max = math.atan2(phys.L, phys.R)
    P_target = saturate(droop.P_bar, droop.P0)
    V = droop.V0
    for _ in range(50):
        lo, hi = flow(-math.pi / 2, V)[0] - P_target, flow(delta_max, V)[0] - P_target
        if lo * hi > 0.0:
            raise ConfigError(f"no steady operating point delivers P0={droop.P0} over this line")
        delta = brentq(lambda d: flow(d, V)[0] - P_target, -math.pi / 2, delta_max, xtol=1e-15)
        p, q, vc, ig = flow(delta, V)
        V_new = droop.V0 + droop.K_Q * (droop.Q0 - saturate(droop.Q_bar, q))
        if abs(V_new - V) < 1e-15:
            break
        V = V_new
    it = ig + 1j * phys.C_f * vc
    return vc, it, ig, p, q, phi + delta


def initial_state(cfg: ScenarioConfig) -> np.ndarray:
    ic, droop, phys = cfg.initial, cfg.droop, cfg.physical
    if ic.mode == "steady":
        vc, it, ig, _, _, theta = _operating_point(cfg, grid_voltage(0.0, cfg))
        v_c, i_t, i_g = (vc.real, vc.imag), (it.real, it.imag), (ig.real, ig.imag)
    else:
        v_c, i_t, i_g, theta = (1.0, 0.0), (0.0, 0.0), (0.0, 0.0), 0.0
    v_c = ic.v_c or v_c
    i_t = ic.i_t or i_t
    i_g = ic.i_g or i_g
    theta = theta if ic.theta is None else ic.theta
    if ic.filters is not None:
        filt = ic.filters
    else:
        p, q = instantaneous_power(v_c, i_g)
        filt = (saturate(droop.Q_bar, q), 0.0, saturate(droop.P_bar, p), 0.0)

    y = np.zeros(CTRL + len(cfg.controller_states))
    y[:10] = [*v_c, *i_t, *i_g, *filt]
    y[THETA] = theta
    if cfg.controller == "dads":
        y[CTRL:] = ic.z
    elif ic.pi is not None:
        y[CTRL:] = ic.pi
    elif ic.mode == "steady":
        y[CTRL:] = _pi_preload(y, cfg)
    return y


def _pi_preload(y, cfg: ScenarioConfig):
    """Integrator values that make the PI loops hold the current state at rest."""
    g = cfg.pi
    Cf, Lf, Rf = cfg.physical.C_f, cfg.physical.L_f, cfg.physical.R_f
    vcd, vcq, itd, itq, igd, igq = y[:6]
    omega = droop_frequency(y[8], cfg.droop)
    ev_d = vcd - droop_voltage_ref(y[6], cfg.droop)[0]
    # terminal voltage that keeps the filter inductor current constant
    vtd = vcd + Rf * itd - omega * Lf * itq
    vtq = vcq + Rf * itq + omega * Lf * itd
    beta_d = (-g.Kp_vc * ev_d + g.Kf_vc * igd - omega * Cf * vcq - itd) / g.Ki_vc if g.Ki_vc else 0.0
    beta_q = (-g.Kp_vc * vcq + g.Kf_vc * igq + omega * Cf * vcd - itq) / g.Ki_vc if g.Ki_vc else 0.0
    gamma_d = (g.Kf_cc * vcd - omega * Lf * itq - vtd) / g.Ki_cc if g.Ki_cc else 0.0
    gamma_q = (g.Kf_cc * vcq + omega * Lf * itd - vtq) / g.Ki_cc if g.Ki_cc else 0.0
    return gamma_d, gamma_q, beta_d, beta_q


# ---------------------------------------------------------------- trajectory


@dataclass(frozen=True)
class TrajectoryRecord:
    t: float
    state: AugmentedState
    signals: dict


@dataclass
class Trajectory:
    """Column store of recorded samples.

    ``columns`` maps every state and signal name (plus ``t``) to an array.
    ``is_step`` marks samples taken at accepted solver steps; the others lie
    on the uniform output grid and come from dense output.
    """

    cfg: ScenarioConfig
    columns: dict[str, np.ndarray]
    is_step: np.ndarray
    segments: list[tuple[float, float]] = field(default_factory=list)
    n_steps: int = 0

    def __len__(self) -> int:
        return self.columns["t"].size

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.columns[key]
        i = int(key)
        names = state_names(self.cfg)
        y = np.array([self.columns[n][i] for n in names])
        sig = {n: self.columns[n][i] for n in SIGNAL_NAMES}
        return TrajectoryRecord(float(self.columns["t"][i]), AugmentedState.from_array(y, self.cfg.controller), sig)

    def __iter__(self) -> Iterator[TrajectoryRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def t(self) -> np.ndarray:
        return self.columns["t"]

    @property
    def final_state(self) -> np.ndarray:
        return np.array([self.columns[n][-1] for n in state_names(self.cfg)])

    def i_t_norm(self) -> np.ndarray:
        return np.hypot(self.columns["itd"], self.columns["itq"])

    def steps_only(self) -> dict[str, np.ndarray]:
        return {k: v[self.is_step] for k, v in self.columns.items()}


class _Recorder:
    def __init__(self, loop: ClosedLoop, names):
        self.loop = loop
        self.names = names
        self.t: list[float] = []
        self.y: list[np.ndarray] = []
        self.sig: list[tuple] = []
        self.step: list[bool] = []

    def add(self, t: float, y: np.ndarray, is_step: bool, v_g_dq: Vec2 | None = None):
        if not np.all(np.isfinite(y)):
            raise IntegrationAbort(f"non-finite state at t={t:.9g}", t)
        try:
            e = self.loop.evaluate(t, y, v_g_dq)
        except GainBlowUpError as exc:
            raise IntegrationAbort(str(exc), t) from None
        self.t.append(t)
        self.y.append(np.array(y, dtype=float))
        self.sig.append((e.p, e.q, e.omega, e.v_ref[0], e.W_d, e.W_q, e.eta, e.h, float(e.active),
                         *e.v_t, *e.v_t_nominal, *e.v_g))
        self.step.append(is_step)

    def build(self, cfg, segments, n_steps) -> Trajectory:
        Y = np.array(self.y)
        S = np.array(self.sig)
        cols = {"t": np.array(self.t)}
        for j, n in enumerate(self.names):
            cols[n] = Y[:, j]
        for j, n in enumerate(SIGNAL_NAMES):
            cols[n] = S[:, j]
        return Trajectory(cfg, cols, np.array(self.step, dtype=bool), segments, n_steps)


def _event_log(traj: Trajectory) -> SafetyEventLog:
    """Filter ON episodes from the accepted-step samples.

    Switching instants are placed at the linearly interpolated zero crossing of
    ``eta`` between the two samples that bracket a change of activity.
    """
    log = SafetyEventLog()
    st = traj.steps_only()
    t, eta, act = st["t"], st["eta"], st["filter_active"] > 0.5
    for k in range(t.size):
        t_switch = None
        if k > 0 and act[k] != act[k - 1]:
            e0, e1 = eta[k - 1], eta[k]
            if e0 != e1 and (e0 < 0.0) != (e1 < 0.0):
                t_switch = t[k - 1] + (t[k] - t[k - 1]) * e0 / (e0 - e1)
        log.record(float(t[k]), bool(act[k]), t_switch)
    return log


def _locate_switch(loop: ClosedLoop, st, vg, mode: bool, monotone) -> tuple[float, np.ndarray]:
    """Time and state where ``eta`` changes sign inside an accepted step.

    The filter's two branches coincide at ``eta = 0``, so integrating each
    branch separately and restarting at the crossing keeps the vector field
    smooth across every step. When the step start already sits on the new
    side (a restart landing a hair past the surface) the whole step is kept.
    """
    def g(t):
        return loop.evaluate(t, st.dense(t), vg).eta

    if (g(st.t_old) < 0.0) != mode:
        return st.t, st.y
    ts = brentq(g, st.t_old, st.t, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    # land just past the surface so the restart sees the new sign
    for _ in range(60):
        if (g(ts) < 0.0) != mode or ts >= st.t:
            break
        ts = min(st.t, ts + max(1e-15, 1e-15 * abs(ts)) * 2.0 ** _)
    if ts >= st.t:
        return st.t, st.y
    ys = np.array(st.dense(ts), dtype=float)
    y_old = st.dense(st.t_old)
    for k in monotone:
        # the interpolant of a non-decreasing component need not be monotone
        ys[k] = min(max(ys[k], y_old[k]), st.y[k])
    return ts, ys


def integrate(cfg: ScenarioConfig, y0: np.ndarray | None = None) -> tuple[Trajectory, SafetyEventLog]:
    """Simulate one scenario; raises :class:`IntegrationAbort` on failure."""
    loop = ClosedLoop(cfg)
    y = initial_state(cfg) if y0 is None else np.array(y0, dtype=float)
    names = state_names(cfg)
    rec = _Recorder(loop, names)
    dt = cfg.output_dt
    n_grid = int(math.floor(cfg.t_end / dt + 1e-9))
    grid = dt * np.arange(n_grid + 1)
    gi = 1  # grid[0] = 0 coincides with the first record

    bounds = [0.0, *[b for b in cfg.grid.breakpoints if 0.0 < b < cfg.t_end], cfg.t_end]
    segments = list(zip(bounds[:-1], bounds[1:]))
    monotone = (CTRL, CTRL + 1) if cfg.controller == "dads" else ()
    n_steps = 0
    rec.add(0.0, y, True)
    t_now = 0.0
    filtered = cfg.safety.enabled
    try:
        for a, b in segments:
            vg = grid_voltage(a, cfg)
            t_start = a
            mode = bool(loop.evaluate(a, y, vg).eta < 0.0) if filtered else None
            while t_start < b:
                fun = loop.segment_rhs(vg, mode)
                if cfg.solver.method == "radau5":
                    stepper = radau5(fun, t_start, y, b, cfg.solver, monotone=monotone)
                else:
                    stepper = dopri5(fun, t_start, y, b, cfg.solver)
                switch = None
                for st in stepper:
                    t_rec, y_rec = st.t, st.y
                    if filtered and bool(loop.evaluate(st.t, st.y, vg).eta < 0.0) != mode:
                        t_rec, y_rec = _locate_switch(loop, st, vg, mode, monotone)
                        switch = t_rec
                    while gi < grid.size and grid[gi] < t_rec - 1e-12:
                        if grid[gi] > t_now + 1e-12:
                            rec.add(float(grid[gi]), st.dense(float(grid[gi])), False, vg)
                        gi += 1
                    # a sample at a segment end carries the left limit of the grid profile
                    rec.add(t_rec, y_rec, True, vg)
                    if gi < grid.size and abs(grid[gi] - t_rec) <= 1e-12:
                        gi += 1
                    t_now, y = t_rec, y_rec
                    n_steps += 1
                    if switch is not None:
                        break
                if switch is None:
                    break
                t_start, mode = switch, not mode
    except NonFiniteState as exc:
        raise IntegrationAbort(str(exc), t_now) from None
    except IntegrationError as exc:
        raise IntegrationAbort(str(exc), t_now) from None
    traj = rec.build(cfg, segments, n_steps)
    return traj, _event_log(traj)
