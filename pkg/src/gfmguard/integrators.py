"""Adaptive one-step ODE integrators with dense output.

Two embedded Runge-Kutta pairs share one settings object and one stepping
protocol (a generator of accepted :class:`Step` objects):

``dopri5``
    Explicit Dormand-Prince 5(4) with a PI step-size controller and the
    classical fourth-order continuous extension. Suited to non-stiff systems.

``radau5``
    Implicit three-stage Radau IIA (order 5) with an embedded third-order
    error estimate, simplified Newton iterations on the transformed
    collocation system, and a predictive (Gustafsson) step controller. L-stable,
    so it handles the very fast current loop of the closed-loop inverter.

Both honour a hard ``max_step`` cap and abort with :class:`StepSizeUnderflow`
when the controller asks for a step below ``min_step``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

RHS = Callable[[float, np.ndarray], np.ndarray]

_EPS = np.finfo(float).eps


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    pass


class NonFiniteState(IntegrationError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    method: str = "radau5"
    rel_tol: float = 1e-7
    abs_tol: float = 1e-9
    max_step: float = 1e-4
    min_step: float = 1e-9
    first_step: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {sorted(METHODS)}")
        for name in ("rel_tol", "abs_tol", "max_step", "min_step"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"SolverSettings.{name} must be > 0")
        if self.min_step > self.max_step:
            raise ValueError("min_step exceeds max_step")


class Step(NamedTuple):
    """One accepted step; ``dense(t)`` interpolates inside ``[t_old, t]``."""

    t_old: float
    t: float
    y: np.ndarray
    dense: Callable[[float], np.ndarray]


def _rms(x: np.ndarray) -> float:
    x = np.ravel(x)
    return math.sqrt(float(np.dot(x, x)) / x.size)


def _clip_to_end(t: float, h: float, t_end: float, min_step: float) -> tuple[float, bool]:
    """Step size and last-step flag; never leaves a sliver shorter than half a step before ``t_end``."""
    rem = t_end - t
    if h >= rem - 1e-12 * max(1.0, abs(t_end)) or rem < 2.0 * min_step:
        return rem, True
    if 2.0 * h > rem:
        return 0.5 * rem, False
    return h, False


def _initial_step(fun: RHS, t0: float, y0: np.ndarray, f0: np.ndarray, order: int, s: SolverSettings) -> float:
    # Hairer-Norsett-Wanner II.4 starting step heuristic
    scale = s.abs_tol + np.abs(y0) * s.rel_tol
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, s.max_step)
    f1 = fun(t0 + h0, y0 + h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return max(min(100 * h0, h1, s.max_step), min(10.0 * s.min_step, s.max_step))


# --- Dormand-Prince 5(4) ----------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [np.array(row) for row in [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth-order minus embedded fourth-order weights
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension (Hairer's dopri5 "d" coefficients)
_DP_D = np.array(
    [
        -12715105075 / 11282082432,
        0.0,
        87487479700 / 32700410799,
        -10690763975 / 1880347072,
        701980252875 / 199316789632,
        -1453857185 / 822651844,
        69997945 / 29380423,
    ]
)


def _dopri_dense(t_old: float, h: float, y_old: np.ndarray, y_new: np.ndarray, K: np.ndarray):
    ydiff = y_new - y_old
    bspl = h * K[0] - ydiff
    r4 = ydiff - h * K[6] - bspl
    r5 = h * (_DP_D @ K)

    def dense(t: float) -> np.ndarray:
        s = (t - t_old) / h
        s1 = 1.0 - s
        return y_old + s * (ydiff + s1 * (bspl + s * (r4 + s1 * r5)))

    return dense


def dopri5(fun: RHS, t0: float, y0: Sequence[float], t_end: float, settings: SolverSettings) -> Iterator[Step]:
    s = settings
    y = np.array(y0, dtype=float)
    t = float(t0)
    n = y.size
    f = np.asarray(fun(t, y), dtype=float)
    h = s.first_step or _initial_step(fun, t, y, f, 5, s)
    beta = 0.04
    expo = 0.2 - 0.75 * beta
    err_old = 1e-4
    K = np.empty((7, n))
    rejected = False

    while t < t_end:
        h, last = _clip_to_end(t, min(h, s.max_step), t_end, s.min_step)
        if h < s.min_step and not last:
            raise StepSizeUnderflow(f"step {h:.3e} below min_step {s.min_step:.1e} at t={t:.9g}")
        K[0] = f
        for i in range(1, 7):
            K[i] = fun(t + _DP_C[i] * h, y + h * (_DP_A[i] @ K[:i]))
        y_new = y + h * (_DP_B @ K)
        f_new = K[6]
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
            if h <= s.min_step:
                raise NonFiniteState(f"non-finite state at t={t:.9g}: {y!r}")
            h *= 0.25
            rejected = True
            continue
        scale = s.abs_tol + s.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(h * (_DP_E @ K) / scale)
        if err <= 1.0:
            fac = err**expo / err_old**beta if err > 0 else 0.0
            fac = min(5.0, max(0.1, fac / 0.9))
            h_next = h / fac if fac > 0 else 10.0 * h
            if rejected:
                h_next = min(h_next, h)
            err_old = max(err, 1e-4)
            dense = _dopri_dense(t, h, y, y_new, K.copy())
            t_old, t, y, f = t, (t_end if last else t + h), y_new, f_new
            rejected = False
            yield Step(t_old, t, y.copy(), dense)
            h = h_next
        else:
            h = h / min(5.0, err**expo / 0.9)
            rejected = True


# --- Radau IIA, 3 stages -------------------------------------------------------

_S6 = 6.0**0.5
_RC = np.array([(4 - _S6) / 10, (4 + _S6) / 10, 1.0])
_RE = np.array([-13 - 7 * _S6, -13 + 7 * _S6, -1.0]) / 3
_MU_REAL = 3 + 3 ** (2 / 3) - 3 ** (1 / 3)
_MU_COMPLEX = 3 + 0.5 * (3 ** (1 / 3) - 3 ** (2 / 3)) - 0.5j * (3 ** (5 / 6) + 3 ** (7 / 6))
# eigenbasis of inv(A): Z = T @ W
_RT = np.array(
    [
        [0.09443876248897524, -0.14125529502095421, 0.03002919410514742],
        [0.25021312296533332, 0.20412935229379994, -0.38294211275726192],
        [1.0, 1.0, 0.0],
    ]
)
_RTI = np.array(
    [
        [4.17871859155190428, 0.32768282076106237, 0.52337644549944951],
        [-4.17871859155190428, -0.32768282076106237, 0.47662355450055044],
        [0.50287263494578682, -2.57192694985560522, 0.59603920482822492],
    ]
)
_RTI_REAL = _RTI[0]
_RTI_COMPLEX = _RTI[1] + 1j * _RTI[2]
# collocation polynomial coefficients for dense output
_RP = np.array(
    [
        [13 / 3 + 7 * _S6 / 3, -23 / 3 - 22 * _S6 / 3, 10 / 3 + 5 * _S6],
        [13 / 3 - 7 * _S6 / 3, -23 / 3 + 22 * _S6 / 3, 10 / 3 - 5 * _S6],
        [1 / 3, -8 / 3, 10 / 3],
    ]
)
# Butcher matrix; its last row is the (positive) quadrature weight vector
RADAU_A = np.array(
    [
        [(88 - 7 * _S6) / 360, (296 - 169 * _S6) / 1800, (-2 + 3 * _S6) / 225],
        [(296 + 169 * _S6) / 1800, (88 + 7 * _S6) / 360, (-2 - 3 * _S6) / 225],
        [(16 - _S6) / 36, (16 + _S6) / 36, 1 / 9],
    ]
)
_NEWTON_MAXITER = 6
_NEWTON_PATIENT = 40


def numerical_jacobian(fun: RHS, t: float, y: np.ndarray, f0: np.ndarray) -> np.ndarray:
    """Forward differences with a fixed relative perturbation per column."""
    n = y.size
    J = np.empty((n, n))
    yp = y.copy()
    for j in range(n):
        d = 1.5e-8 * max(1.0, abs(y[j]))
        yp[j] = y[j] + d
        J[:, j] = (fun(t, yp) - f0) / d
        yp[j] = y[j]
    return J


def _radau_dense(t_old: float, h: float, y_old: np.ndarray, Z: np.ndarray):
    Q = Z.T @ _RP

    def dense(t: float) -> np.ndarray:
        x = (t - t_old) / h
        return y_old + Q @ np.array([x, x * x, x * x * x])

    return dense


def radau5(
    fun: RHS,
    t0: float,
    y0: Sequence[float],
    t_end: float,
    settings: SolverSettings,
    jac: Callable[[float, np.ndarray, np.ndarray], np.ndarray] | None = None,
    monotone: Sequence[int] = (),
) -> Iterator[Step]:
    """Radau IIA stepping.

    ``monotone`` lists components whose right-hand side is known to be
    non-negative. After Newton convergence those components are advanced with
    the quadrature ``y + h * sum(b_i * f_i)`` over the final stage derivatives
    instead of the Newton iterate, so they can never decrease through solver
    round-off (all Radau IIA weights are positive).
    """
    s = settings
    jac = jac or (lambda t, y, f: numerical_jacobian(fun, t, y, f))
    mono = np.asarray(monotone, dtype=int)
    y = np.array(y0, dtype=float)
    t = float(t0)
    n = y.size
    I = np.eye(n)
    f = np.asarray(fun(t, y), dtype=float)
    h_abs = s.first_step or _initial_step(fun, t, y, f, 3, s)
    h_abs_old = err_old = None
    newton_tol = max(10 * _EPS / s.rel_tol, min(0.03, s.rel_tol**0.5))
    J = jac(t, y, f)
    current_jac = True
    LU_real = LU_complex = None
    Z_prev: np.ndarray | None = None
    dense_prev = None

    while t < t_end:
        if h_abs > s.max_step:
            h_abs, h_abs_old, err_old = s.max_step, None, None
            LU_real = LU_complex = None
        rejected = False
        while True:
            h, last = _clip_to_end(t, h_abs, t_end, s.min_step)
            if h < s.min_step and not last:
                raise StepSizeUnderflow(f"step {h:.3e} below min_step {s.min_step:.1e} at t={t:.9g}")
            if h != h_abs:
                LU_real = LU_complex = None
            if dense_prev is None:
                Z0 = np.zeros((3, n))
            else:
                Z0 = np.array([dense_prev(t + c * h) for c in _RC]) - y
            scale = s.abs_tol + np.abs(y) * s.rel_tol

            converged = False
            while not converged:
                if LU_real is None or LU_complex is None:
                    LU_real = lu_factor(_MU_REAL / h * I - J, check_finite=False)
                    LU_complex = lu_factor(_MU_COMPLEX / h * I - J, check_finite=False)
                converged, n_iter, Z, F, rate = _collocation(fun, t, y, h, Z0, scale, newton_tol, LU_real, LU_complex)
                if not converged:
                    if current_jac:
                        break
                    J = jac(t, y, f)
                    current_jac = True
                    LU_real = LU_complex = None
            if not converged and 0.5 * h < s.min_step:
                # at the step floor, let a contracting iteration run longer before giving up
                converged, n_iter, Z, F, rate = _collocation(
                    fun, t, y, h, Z0, scale, newton_tol, LU_real, LU_complex, max_iter=_NEWTON_PATIENT
                )
            if not converged:
                h_abs = 0.5 * h
                LU_real = LU_complex = None
                if h_abs < s.min_step:
                    raise StepSizeUnderflow(f"Newton failure with h={h:.3e} at t={t:.9g}")
                continue

            if mono.size:
                for i in range(3):
                    F[i] = fun(t + h * _RC[i], y + Z[i])
                Z[:, mono] = h * (RADAU_A @ F[:, mono])
            y_new = y + Z[-1]
            ZE = Z.T @ _RE / h
            error = lu_solve(LU_real, f + ZE, check_finite=False)
            scale = s.abs_tol + np.maximum(np.abs(y), np.abs(y_new)) * s.rel_tol
            err = _rms(error / scale)
            safety = 0.9 * (2 * _NEWTON_MAXITER + 1) / (2 * _NEWTON_MAXITER + n_iter)
            if rejected and err > 1.0:
                error = lu_solve(LU_real, fun(t, y + error) + ZE, check_finite=False)
                err = _rms(error / scale)
            if not math.isfinite(err):
                err = 1e10
            if err > 1.0:
                factor = _predict_factor(h, h_abs_old, err, err_old)
                h_abs = h * max(0.2, safety * factor)
                LU_real = LU_complex = None
                rejected = True
                if h_abs < s.min_step and not last:
                    raise StepSizeUnderflow(f"error test failing with h={h:.3e} at t={t:.9g}")
                continue
            break

        recompute_jac = n_iter > 2 and rate is not None and rate > 1e-3
        factor = min(10.0, safety * _predict_factor(h, h_abs_old, err, err_old))
        if not recompute_jac and factor < 1.2:
            factor = 1.0
        else:
            LU_real = LU_complex = None
        f_new = np.asarray(fun(t + h, y_new), dtype=float)
        if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
            raise NonFiniteState(f"non-finite state at t={t + h:.9g}: {y_new!r}")
        t_new = t_end if last else t + h
        if recompute_jac:
            J = jac(t_new, y_new, f_new)
            current_jac = True
        else:
            current_jac = False
        h_abs_old, err_old = h, err
        h_abs = h * factor
        dense_prev = _radau_dense(t, h, y, Z)
        t_old, t, y, f = t, t_new, y_new, f_new
        yield Step(t_old, t, y.copy(), dense_prev)


def _predict_factor(h, h_old, err, err_old) -> float:
    if err_old is None or h_old is None or err == 0:
        mult = 1.0
    else:
        mult = h / h_old * (err_old / err) ** 0.25
    with np.errstate(divide="ignore"):
        return min(1.0, mult) * err**-0.25 if err > 0 else 10.0


def _collocation(fun, t, y, h, Z0, scale, tol, LU_real, LU_complex, max_iter=_NEWTON_MAXITER):
    n = y.size
    M_real = _MU_REAL / h
    M_complex = _MU_COMPLEX / h
    W = _RTI @ Z0
    Z = Z0
    F = np.empty((3, n))
    ch = h * _RC
    dW = np.empty_like(W)
    dW_norm_old = None
    rate = None
    converged = False
    k = 0
    for k in range(max_iter):
        for i in range(3):
            F[i] = fun(t + ch[i], y + Z[i])
        if not np.all(np.isfinite(F)):
            break
        f_real = F.T @ _RTI_REAL - M_real * W[0]
        f_complex = F.T @ _RTI_COMPLEX - M_complex * (W[1] + 1j * W[2])
        dW[0] = lu_solve(LU_real, f_real, check_finite=False)
        dWc = lu_solve(LU_complex, f_complex, check_finite=False)
        dW[1] = dWc.real
        dW[2] = dWc.imag
        dW_norm = _rms(dW / scale)
        if dW_norm_old is not None:
            rate = dW_norm / dW_norm_old
        if rate is not None and (rate >= 1 or rate ** (max_iter - k) / (1 - rate) * dW_norm > tol):
            break
        W = W + dW
        Z = _RT @ W
        if dW_norm == 0 or (rate is not None and rate / (1 - rate) * dW_norm < tol):
            converged = True
            break
        dW_norm_old = dW_norm
    return converged, k + 1, Z, F, rate


METHODS = {"dopri5": dopri5, "radau5": radau5}


def solve(
    fun: RHS,
    t_span: tuple[float, float],
    y0: Sequence[float],
    settings: SolverSettings | None = None,
    t_eval: Sequence[float] | None = None,
    **kwargs,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate and return ``(t, Y)`` with ``Y`` of shape ``(len(t), n)``.

    Without ``t_eval`` every accepted step is returned (the initial point
    included); with it, the dense output is sampled at the requested times.
    """
    settings = settings or SolverSettings()
    stepper = METHODS[settings.method]
    t0, t1 = t_span
    ts, ys = [float(t0)], [np.array(y0, dtype=float)]
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        ts, ys = [], []
        j = 0
        while j < t_eval.size and t_eval[j] <= t0:
            ts.append(t_eval[j])
            ys.append(np.array(y0, dtype=float))
            j += 1
    for st in stepper(fun, t0, y0, t1, settings, **kwargs):
        if t_eval is None:
            ts.append(st.t)
            ys.append(st.y)
            continue
        while j < t_eval.size and t_eval[j] <= st.t:
            ts.append(t_eval[j])
            ys.append(st.y.copy() if t_eval[j] == st.t else st.dense(t_eval[j]))
            j += 1
    return np.array(ts), np.array(ys)
