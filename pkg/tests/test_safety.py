import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfmguard.analysis import barrier_constraint_from_plant, projection_suite, qp_projection_oracle
from gfmguard.controllers import KnownParams
from gfmguard.plant import PhysicalParams, PlantState, plant_derivative
from gfmguard.safety import SafetyEventLog, SafetyParams, apply_filter, barrier, eta, record_eta

PHYS = PhysicalParams()
KNOWN = KnownParams.from_physical(PHYS)
ON = SafetyParams(enabled=True)
x_el = st.floats(-1.5, 1.5, allow_nan=False)


def state(itd, itq, vcd=1.0, vcq=0.0):
    return PlantState(vcd, vcq, itd, itq, 0.5, 0.0, 0.0, 0.0, 1.0, 0.0)


def test_barrier():
    assert barrier((0.0, 0.0), 1.2) == pytest.approx(1.44)
    assert barrier((1.2, 0.0), 1.2) == pytest.approx(0.0, abs=1e-15)
    assert barrier((0.0, 2.0), 1.0) == -3.0


def test_eta_equals_hdot_plus_ch():
    # eta is dh/dt + c h under the nominal command; check it against the plant
    x, vn = state(0.7, -0.4, 1.02, 0.05), (1.1, 0.2)
    d = plant_derivative(x, 1.0, vn, (1.0, 0.0), PHYS)
    hdot = -2 * (x.itd * d.itd + x.itq * d.itq)
    assert eta(x, 1.0, vn, ON, KNOWN) == pytest.approx(hdot + ON.c * barrier((x.itd, x.itq), ON.I_max), rel=1e-12)


def test_disabled_or_admissible_passthrough():
    x = state(1.19, 0.0)
    vn = (5.0, 0.0)  # strongly pushes current up
    off = apply_filter(x, 1.0, vn, SafetyParams(enabled=False, c=1.0), KNOWN)
    assert off.v_t_applied == vn and not off.active and off.eta < 0
    safe = apply_filter(state(0.1, 0.0), 1.0, (1.0, 0.0), ON, KNOWN)
    assert safe.v_t_applied == (1.0, 0.0) and not safe.active


def test_zero_current_passthrough():
    dec = apply_filter(state(0.0, 0.0), 1.0, (1e9, 0.0), SafetyParams(enabled=True, I_max=1e-20), KNOWN)
    assert not dec.active


def test_axis_aligned_projection_examples():
    assert qp_projection_oracle((0.5, 3.0), ((-1.0, 0.0), -1.0)) == (0.5, 3.0)
    assert qp_projection_oracle((2.0, 0.0), ((-1.0, 0.0), -1.0)) == pytest.approx((1.0, 0.0))
    with pytest.raises(ValueError):
        qp_projection_oracle((0.0, 0.0), ((0.0, 0.0), 1.0))


@given(x_el, x_el, x_el, x_el, st.floats(-3, 3), st.floats(-3, 3), st.floats(0.95, 1.05))
@settings(max_examples=200, deadline=None)
def test_filter_is_minimal_projection(vcd, vcq, itd, itq, v0, v1, omega):
    x = state(itd, itq, vcd, vcq)
    dec = apply_filter(x, omega, (v0, v1), ON, KNOWN)
    a, off = barrier_constraint_from_plant(x, omega, ON.c, ON.I_max, PHYS)
    ref = qp_projection_oracle((v0, v1), (a, off))
    scale = max(1.0, math.hypot(*ref))
    assert math.hypot(dec.v_t_applied[0] - ref[0], dec.v_t_applied[1] - ref[1]) <= 1e-8 * scale
    if dec.active:
        # constraint met with equality, and the correction is parallel to i_t
        assert abs(eta(x, omega, dec.v_t_applied, ON, KNOWN)) <= 1e-9 * abs(dec.eta)
        dv = np.subtract(dec.v_t_applied, (v0, v1))
        assert abs(dv[0] * itq - dv[1] * itd) <= 1e-9 * (1 + np.linalg.norm(dv))


def test_projection_suite_passes():
    for rep in projection_suite(np.random.default_rng(3), n=300):
        assert rep.passed, rep.line()


def test_event_log_counts_episodes():
    log = SafetyEventLog()
    for t, a in [(0, False), (1, True), (2, True), (3, False), (4, True)]:
        record_eta(log, t, a)
    assert log.N_eta == 2
    assert log.is_on
    assert log.T_eta == pytest.approx(2.0)  # [1, 3] closed, [4, 4] still open
    record_eta(log, 5.5, False, t_switch=5.25)
    assert log.episodes[-1] == (4, 5.25)
    assert log.T_eta == pytest.approx(3.25)


def test_event_log_rejects_time_reversal():
    log = SafetyEventLog().record(1.0, False)
    with pytest.raises(ValueError):
        log.record(0.5, True)


def test_params_validation():
    with pytest.raises(ValueError):
        SafetyParams(I_max=0.0)
    with pytest.raises(ValueError):
        SafetyParams(c=-1.0)
