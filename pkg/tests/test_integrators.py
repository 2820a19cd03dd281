import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from gfmguard.integrators import (
    SolverSettings,
    StepSizeUnderflow,
    dopri5,
    numerical_jacobian,
    radau5,
    solve,
)

TIGHT = dict(rel_tol=1e-10, abs_tol=1e-12, max_step=1.0)


@pytest.mark.parametrize("method", ["dopri5", "radau5"])
def test_exponential_decay(method):
    t, Y = solve(lambda t, y: -y, (0.0, 1.0), [1.0], SolverSettings(method=method, **TIGHT))
    assert abs(Y[-1, 0] - math.exp(-1.0)) < 1e-8
    assert t[-1] == 1.0


@pytest.mark.parametrize("method", ["dopri5", "radau5"])
def test_harmonic_oscillator_dense_output(method):
    te = np.linspace(0, 10, 101)
    t, Y = solve(lambda t, y: np.array([y[1], -y[0]]), (0.0, 10.0), [1.0, 0.0],
                 SolverSettings(method=method, **TIGHT), t_eval=te)
    assert np.allclose(t, te)
    assert np.max(np.abs(Y[:, 0] - np.cos(te))) < 1e-7


def vdp(mu):
    def f(t, y):
        return np.array([y[1], mu * (1 - y[0] ** 2) * y[1] - y[0]])

    return f


def test_stiff_van_der_pol_against_scipy():
    f = vdp(1000.0)
    ref = solve_ivp(f, (0, 2000), [2.0, 0.0], method="Radau", rtol=1e-9, atol=1e-11)
    _, Y = solve(f, (0.0, 2000.0), [2.0, 0.0], SolverSettings(rel_tol=1e-7, abs_tol=1e-9, max_step=100.0))
    assert abs(Y[-1, 0] - ref.y[0, -1]) < 1e-4


def test_radau_steps_past_explicit_stability_limit():
    # lambda = -1e6: explicit methods need h < 3.3e-6
    steps = list(radau5(lambda t, y: -1e6 * (y - np.cos(t)), 0.0, [0.0], 1.0,
                        SolverSettings(rel_tol=1e-6, abs_tol=1e-9, max_step=0.1)))
    assert len(steps) < 200
    assert abs(steps[-1].y[0] - math.cos(1.0)) < 1e-5


def test_monotone_components_never_decrease():
    # z' = max(sin(50 t), 0) * exp(-z) is non-negative; Newton round-off must not make z step down
    def f(t, y):
        return np.array([-1e5 * (y[0] - math.sin(50 * t)), max(math.sin(50 * t), 0.0) * 1e-9 * math.exp(-y[1])])

    zs = [st.y[1] for st in radau5(f, 0.0, [0.0, 0.0], 1.0, SolverSettings(rel_tol=1e-8, abs_tol=1e-12), monotone=[1])]
    assert np.min(np.diff(zs)) >= 0.0


def test_min_step_underflow():
    # blows up at t = 1
    with pytest.raises(StepSizeUnderflow):
        list(dopri5(lambda t, y: y**2, 0.0, [1.0], 2.0, SolverSettings(method="dopri5", min_step=1e-6)))


def test_max_step_is_honoured():
    steps = list(dopri5(lambda t, y: 0 * y, 0.0, [1.0], 1.0, SolverSettings(method="dopri5", max_step=0.01)))
    assert max(s.t - s.t_old for s in steps) <= 0.01 + 1e-15


def test_no_sliver_before_end():
    steps = list(radau5(lambda t, y: -y, 0.0, [1.0], 1.00000005, SolverSettings(max_step=1e-2)))
    assert min(s.t - s.t_old for s in steps) > 1e-3


@given(st.floats(-50, -0.1), st.floats(0.1, 3.0))
@settings(max_examples=20, deadline=None)
def test_tolerance_convergence(lam, T):
    # tightening the tolerances by 10x moves the answer by less than 10x the looser tolerance
    def f(t, y):
        return np.array([y[1], lam * y[1] - 4 * y[0]])

    loose = solve(f, (0, T), [1.0, 0.0], SolverSettings(rel_tol=1e-6, abs_tol=1e-8))[1][-1]
    tight = solve(f, (0, T), [1.0, 0.0], SolverSettings(rel_tol=1e-7, abs_tol=1e-9))[1][-1]
    assert np.max(np.abs(loose - tight)) < 10 * 1e-6 * max(1.0, np.max(np.abs(tight)))


def test_numerical_jacobian_linear():
    A = np.array([[1.0, 2.0], [-3.0, 4.0]])
    y = np.array([0.3, -0.7])
    J = numerical_jacobian(lambda t, y: A @ y, 0.0, y, A @ y)
    assert np.allclose(J, A, atol=1e-6)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(method="rk4")
    with pytest.raises(ValueError):
        SolverSettings(min_step=1.0, max_step=0.1)
