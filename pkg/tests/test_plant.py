import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfmguard.plant import InverterState, PhysicalParams, PlantState, plant_derivative

P = PhysicalParams()
unit = st.floats(-1.5, 1.5, allow_nan=False)


def phasor_steady_state(vc: complex, vg: complex, omega: float, p: PhysicalParams):
    """Sinusoidal steady state from circuit phasors (per-unit, reactances scale with omega)."""
    ig = (vc - vg) / complex(p.R, omega * p.L)
    it = ig + 1j * omega * p.C_f * vc
    vt = vc + complex(p.R_f, omega * p.L_f) * it
    return it, ig, vt


@given(unit, unit, unit, unit, st.floats(0.9, 1.1))
def test_phasor_steady_state_is_equilibrium(a, b, c, d, omega):
    vc, vg = complex(a, b), complex(c, d)
    it, ig, vt = phasor_steady_state(vc, vg, omega, P)
    x = InverterState(vc.real, vc.imag, it.real, it.imag, ig.real, ig.imag)
    dx = plant_derivative(x, omega, (vt.real, vt.imag), (vg.real, vg.imag), P)
    assert np.max(np.abs(dx)) < 1e-9


def test_affine_in_terminal_voltage():
    x = InverterState(1.0, 0.1, 0.5, -0.2, 0.4, -0.3)
    d0 = np.array(plant_derivative(x, 1.0, (0.0, 0.0), (1.0, 0.0), P))
    d1 = np.array(plant_derivative(x, 1.0, (1.0, 0.0), (1.0, 0.0), P))
    d2 = np.array(plant_derivative(x, 1.0, (2.0, 0.0), (1.0, 0.0), P))
    assert np.allclose(d2 - d1, d1 - d0, rtol=0, atol=1e-9)
    # only the terminal-current d equation sees v_t,d, with gain omega_b / L_f
    diff = d1 - d0
    assert math.isclose(diff[2], P.omega_b / P.L_f, rel_tol=1e-12)
    assert np.all(np.delete(diff, 2) == 0.0)


def test_accepts_full_plant_state():
    x = PlantState(1.0, 0.0, 0.3, 0.1, 0.2, 0.0, 0.5, 0.0, 1.0, 0.0)
    a = plant_derivative(x, 1.0, (1.0, 0.0), (1.0, 0.0), P)
    b = plant_derivative(x.inverter, 1.0, (1.0, 0.0), (1.0, 0.0), P)
    assert a == b


def test_rejects_nonpositive():
    with pytest.raises(ValueError):
        PhysicalParams(L=0.0)
    with pytest.raises(ValueError):
        PhysicalParams(C_f=-1.0)
