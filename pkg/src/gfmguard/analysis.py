"""Trajectory verdicts and independent numeric oracles.

Checks are pure functions of a :class:`~gfmguard.engine.Trajectory`; each
returns a :class:`CheckReport`. The oracles re-derive quantities by a
different route than the simulator uses (closed-form filter response,
generic half-space projection) so they can cross-check it.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .frames import Vec2


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    measured: float
    threshold: float
    worst_time: float
    details: str = ""

    # ``pass`` is a keyword, so the field is ``passed`` and serialises as "pass"
    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return {k: _jsonable(v) for k, v in d.items()}

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: measured={self.measured:.6g} threshold={self.threshold:.6g} at t={self.worst_time:.6g} {self.details}".rstrip()


def _jsonable(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def reports_to_json(reports: Iterable[CheckReport], **extra) -> str:
    body = {"checks": [r.to_dict() for r in reports]}
    body.update({k: _jsonable(v) for k, v in extra.items()})
    body["pass"] = all(c["pass"] for c in body["checks"])
    return json.dumps(body, indent=2)


def _window_mask(t: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (t >= lo - 1e-12) & (t <= hi + 1e-12)


# ---------------------------------------------------------------- checks


def residual_signal(traj) -> np.ndarray:
    """Per-sample residual ``max(|v_cd - v_ref_d|, |v_cq|)``."""
    return np.maximum(np.abs(traj["vcd"] - traj["v_ref_d"]), np.abs(traj["vcq"]))


def check_residual_band(
    traj,
    epsilon: float | None = None,
    settle_window: float = 0.5,
    band_tol: float = 0.05,
    windows: Sequence[tuple[float, float]] | None = None,
    name: str = "residual_band",
) -> CheckReport:
    """Voltage-error residual against the ``sqrt(2 epsilon)`` band.

    By default the check covers the final ``settle_window`` of every
    constant-grid segment; explicit ``windows`` override that.
    """
    if epsilon is None:
        epsilon = traj.cfg.dads.epsilon
    t = traj.t
    if windows is None:
        windows = [(b - settle_window, b) for a, b in traj.segments]
        if any(lo < a - 1e-12 for (lo, _), (a, _b) in zip(windows, traj.segments)):
            raise ValueError(f"a constant-grid segment is shorter than the settle window {settle_window}")
    if t[-1] < max(hi for _, hi in windows) - 1e-9 or t[0] > min(lo for lo, _ in windows) + 1e-9:
        raise ValueError("trajectory too short for the requested windows")
    band = math.sqrt(2.0 * epsilon) * (1.0 + band_tol)
    res = residual_signal(traj)
    worst, worst_t, parts = -math.inf, math.nan, []
    for lo, hi in windows:
        m = _window_mask(t, lo, hi)
        k = int(np.argmax(np.where(m, res, -np.inf)))
        parts.append(f"[{lo:g},{hi:g}]:{res[k]:.4g}")
        if res[k] > worst:
            worst, worst_t = float(res[k]), float(t[k])
    return CheckReport(name, worst <= band, worst, band, worst_t, "windows " + " ".join(parts))


def check_decay_envelope(
    traj,
    k: float | None = None,
    R: float | None = None,
    L: float | None = None,
    mu: tuple[float, float] | None = None,
    v_g_bound: tuple[float, float] | None = None,
    env_tol: float = 1e-6,
) -> CheckReport:
    """``2W(t) <= 2 exp(-2kt) W(0) + mu (1 + R^2 + |v_g|_inf^2) / (k L^2)`` on both axes.

    The line parameters default to the simulator's true values; ``v_g_bound``
    defaults to the measured sup of each local-frame grid-voltage component.
    """
    cfg = traj.cfg
    k = cfg.dads.decay_rate if k is None else k
    R = cfg.physical.R if R is None else R
    L = cfg.physical.L if L is None else L
    mu = (cfg.dads.mu_d, cfg.dads.mu_q) if mu is None else mu
    if v_g_bound is None:
        v_g_bound = (float(np.max(np.abs(traj["v_g_d"]))), float(np.max(np.abs(traj["v_g_q"]))))
    t = traj.t - traj.t[0]
    worst_margin, worst_t, worst_ratio, parts = -math.inf, math.nan, 0.0, []
    for axis, m, vg in zip("dq", mu, v_g_bound):
        W = traj[f"W_{axis}"]
        env = 2.0 * np.exp(-2.0 * k * t) * W[0] + m * (1.0 + R * R + vg * vg) / (k * L * L) + env_tol
        margin = 2.0 * W - env
        i = int(np.argmax(margin))
        parts.append(f"{axis}: max 2W={2 * W.max():.4g} floor={env[-1]:.4g}")
        if margin[i] > worst_margin:
            worst_margin, worst_t, worst_ratio = float(margin[i]), float(traj.t[i]), float(2 * W[i] / env[i])
    return CheckReport("decay_envelope", worst_margin <= 0.0, worst_ratio, 1.0, worst_t,
                       "ratio 2W/envelope; " + "; ".join(parts))


def check_current_invariance(
    traj, I_max: float | None = None, inv_tol: float = 1e-4, h_tol: float = 1e-6, c: float | None = None
) -> CheckReport:
    cfg = traj.cfg
    I_max = cfg.safety.I_max if I_max is None else I_max
    c = cfg.safety.c if c is None else c
    it = traj.i_t_norm()
    i = int(np.argmax(it))
    limit = I_max * (1.0 + inv_tol)
    h = I_max * I_max - it * it
    t = traj.t - traj.t[0]
    h_floor = np.exp(-c * t) * h[0] - h_tol
    j = int(np.argmin(h - h_floor))
    h_ok = bool(h[j] >= h_floor[j])
    ok = bool(it[i] <= limit) and h_ok
    details = f"min h={h.min():.3e}; h decay bound {'held' if h_ok else f'violated at t={traj.t[j]:.6g}'}"
    return CheckReport("current_invariance", ok, float(it[i]), limit, float(traj.t[i]), details)


def check_gain_monotone_bounded(
    traj, epsilon: float | None = None, dec_tol: float = 1e-12, const_tol: float = 1e-9
) -> CheckReport:
    """Adaptive gains never decrease, end finite, and freeze while ``W <= epsilon``.

    Only accepted-step samples are used: interpolated grid samples carry
    dense-output wiggle that is not part of the solution.
    """
    if "z_d" not in traj.columns:
        raise ValueError("trajectory has no adaptive gains (not a DADS run)")
    epsilon = traj.cfg.dads.epsilon if epsilon is None else epsilon
    st = traj.steps_only()
    t = st["t"]
    ok, worst_dec, worst_t, parts = True, 0.0, float(t[0]), []
    for axis in "dq":
        z, W = st[f"z_{axis}"], st[f"W_{axis}"]
        dz = np.diff(z)
        i = int(np.argmin(dz)) if dz.size else 0
        if dz.size and dz[i] < worst_dec:
            worst_dec, worst_t = float(dz[i]), float(t[i + 1])
        finite = bool(np.isfinite(z[-1]))
        # maximal runs of samples with W <= epsilon
        drift = 0.0
        inside = W <= epsilon
        start = None
        for n in range(z.size + 1):
            if n < z.size and inside[n]:
                if start is None:
                    start = n
            elif start is not None:
                drift = max(drift, float(z[n - 1] - z[start]))
                start = None
        ok &= finite and drift <= const_tol
        parts.append(f"z_{axis}: {z[0]:.6g}->{z[-1]:.6g} (+{z[-1] - z[0]:.4g}), deadzone drift {drift:.2e}")
    ok &= worst_dec >= -dec_tol
    return CheckReport("gain_monotone_bounded", bool(ok), worst_dec, -dec_tol, worst_t,
                       "min per-step change; " + "; ".join(parts))


# ---------------------------------------------------------------- oracles


def filter_bounds(b: float, xi: float, init: tuple[float, float], input_bound: float) -> tuple[float, float]:
    """Uniform bounds on both states of the critically over-damped filter."""
    if not b > 0.0:
        raise ValueError("b must be > 0")
    if not xi > 1.0:
        raise ValueError("xi must be > 1")
    e10, e20 = abs(init[0]), abs(init[1])
    s = math.sqrt(xi * xi - 1.0)
    bound1 = (xi * e10 + e20 / b) / s + input_bound
    bound2 = (b * e10 + xi * e20) / s + b * input_bound / s
    return bound1, bound2


def filter_exponential_oracle(
    b: float, xi: float, init: tuple[float, float], u_const: float, t
) -> tuple[float, float] | tuple[np.ndarray, np.ndarray]:
    """Exact response of ``eta1' = eta2, eta2' = -2 xi b eta2 - b^2 (eta1 - u)``.

    Two-mode expansion around the equilibrium ``(u, 0)`` with rates
    ``g1,2 = b (xi +/- sqrt(xi^2 - 1))`` and eigenvectors ``(1, -g)``.
    """
    s = math.sqrt(xi * xi - 1.0)
    g1, g2 = b * (xi + s), b * (xi - s)
    e10, e20 = init[0] - u_const, init[1]
    c1 = -(e20 + g2 * e10) / (g1 - g2)
    c2 = (e20 + g1 * e10) / (g1 - g2)
    tt = np.asarray(t, dtype=float)
    m1, m2 = c1 * np.exp(-g1 * tt), c2 * np.exp(-g2 * tt)
    eta1 = u_const + m1 + m2
    eta2 = -g1 * m1 - g2 * m2
    if tt.ndim == 0:
        return float(eta1), float(eta2)
    return eta1, eta2


def qp_projection_oracle(v_nominal: tuple[float, float], constraint: tuple[tuple[float, float], float]) -> Vec2:
    """Euclidean projection onto ``{v : normal . v >= offset}``."""
    (a0, a1), offset = constraint
    v0, v1 = v_nominal
    slack = a0 * v0 + a1 * v1 - offset
    if slack >= 0.0:
        return Vec2(v0, v1)
    n2 = a0 * a0 + a1 * a1
    if n2 == 0.0:
        raise ValueError("degenerate constraint normal with a violated constraint")
    lam = -slack / n2
    return Vec2(v0 + lam * a0, v1 + lam * a1)


def settle_time(traj, epsilon: float | None = None, band_tol: float = 0.05, after: float = 0.0) -> float:
    """Last time after ``after`` at which the residual is outside the band; 0 if never."""
    epsilon = traj.cfg.dads.epsilon if epsilon is None else epsilon
    band = math.sqrt(2.0 * epsilon) * (1.0 + band_tol)
    res = residual_signal(traj)
    out = (res > band) & (traj.t >= after)
    if not out.any():
        return 0.0
    return float(traj.t[np.nonzero(out)[0][-1]])


# ---------------------------------------------------------------- randomized oracle suites


def barrier_constraint_from_plant(x, omega: float, c: float, I_max: float, phys) -> tuple[tuple[float, float], float]:
    """Half-space ``a . v_t >= offset`` equivalent to ``dh/dt + c h >= 0``.

    Built by evaluating the plant's current derivative at three terminal
    voltages (it is affine in ``v_t``), so it shares no algebra with the
    filter's closed form.
    """
    from .plant import InverterState, plant_derivative

    inv = InverterState(*x[:6])
    itd, itq = inv.itd, inv.itq

    def hdot(v):
        d = plant_derivative(inv, omega, v, (0.0, 0.0), phys)
        return -2.0 * (itd * d.itd + itq * d.itq)

    h0 = hdot((0.0, 0.0))
    a = (hdot((1.0, 0.0)) - h0, hdot((0.0, 1.0)) - h0)
    h = I_max * I_max - itd * itd - itq * itq
    return a, -c * h - h0


def projection_suite(rng: np.random.Generator, n: int = 1000, tol: float = 1e-8, eta_rel: float = 1e-9) -> list[CheckReport]:
    """``apply_filter`` against the generic projection on random states."""
    from .controllers import KnownParams
    from .plant import PhysicalParams, PlantState
    from .safety import SafetyParams, apply_filter, eta

    phys = PhysicalParams()
    known = KnownParams.from_physical(phys)
    sp = SafetyParams(enabled=True)
    worst_v, worst_eta, n_active = 0.0, 0.0, 0
    for _ in range(n):
        x = PlantState(*rng.uniform(-1.5, 1.5, 6), *rng.uniform(-1.0, 1.0, 4))
        omega = rng.uniform(0.95, 1.05)
        vn = tuple(rng.uniform(-3.0, 3.0, 2))
        dec = apply_filter(x, omega, vn, sp, known)
        ref = qp_projection_oracle(vn, barrier_constraint_from_plant(x, omega, sp.c, sp.I_max, phys))
        worst_v = max(worst_v, math.hypot(dec.v_t_applied[0] - ref[0], dec.v_t_applied[1] - ref[1]))
        if dec.active:
            n_active += 1
            e_after = eta(x, omega, dec.v_t_applied, sp, known)
            worst_eta = max(worst_eta, abs(e_after) / abs(dec.eta))
    return [
        CheckReport("qp_projection_match", worst_v <= tol, worst_v, tol, math.nan, f"{n} states, {n_active} active"),
        CheckReport("qp_active_eta_zero", worst_eta <= eta_rel, worst_eta, eta_rel, math.nan,
                    f"relative |eta| after filtering over {n_active} active states"),
    ]


def filter_bound_case(b: float, xi: float, M: float, init: tuple[float, float], settings=None, n_samples: int = 400):
    """Simulate the filter with constant input ``M``; returns (t, eta, bounds, closed form)."""
    from .integrators import SolverSettings, solve

    settings = settings or SolverSettings(method="radau5", rel_tol=1e-10, abs_tol=1e-10, max_step=1e3, min_step=1e-14)
    g2 = b * (xi - math.sqrt(xi * xi - 1.0))
    T = 10.0 / g2
    # resolve the fast transient and the slow tail alike
    t_eval = np.unique(np.concatenate([np.geomspace(1e-6 / b, T, n_samples), np.linspace(0.0, T, n_samples)]))
    A = np.array([[0.0, 1.0], [-b * b, -2.0 * xi * b]])
    B = np.array([0.0, b * b * M])
    t, Y = solve(lambda t, y: A @ y + B, (0.0, T), init, settings, t_eval=t_eval, jac=lambda t, y, f: A)
    return t, Y, filter_bounds(b, xi, init, abs(M)), filter_exponential_oracle(b, xi, init, M, t)


def filter_bound_suite(rng: np.random.Generator, n: int = 100, tol: float = 1e-6) -> list[CheckReport]:
    worst_bound, worst_match = -math.inf, 0.0
    for _ in range(n):
        b = rng.uniform(1.0, 1000.0)
        xi = 3.0 - rng.uniform(0.0, 2.0)  # (1, 3]
        M = rng.uniform(0.0, 2.0)
        init = tuple(rng.uniform(-2.0, 2.0, 2))
        t, Y, (b1, b2), (e1, e2) = filter_bound_case(b, xi, M, init)
        worst_bound = max(worst_bound, float(np.max(np.abs(Y[:, 0]) - b1)), float(np.max(np.abs(Y[:, 1]) - b2)))
        worst_match = max(worst_match, float(np.max(np.abs(Y[:, 0] - e1))), float(np.max(np.abs(Y[:, 1] - e2))))
    return [
        CheckReport("filter_bounds", worst_bound <= tol, worst_bound, tol, math.nan, f"max excess over {n} cases"),
        CheckReport("filter_closed_form", worst_match <= tol, worst_match, tol, math.nan, f"max deviation over {n} cases"),
    ]
