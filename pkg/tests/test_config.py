import math

import pytest

from gfmguard.config import ConfigError, GridProfile, ScenarioConfig, dump_config, from_dict, load_config, to_dict


def test_defaults_match_published_parameters():
    c = ScenarioConfig()
    assert (c.physical.C_f, c.physical.L_f, c.physical.R_f, c.physical.R, c.physical.L) == (0.3, 0.05, 7.2e-3, 0.2, 0.8)
    assert math.isclose(c.physical.omega_b, 120 * math.pi)
    assert (c.dads.K_VC, c.dads.K_CC, c.dads.Gamma_d, c.dads.mu_q, c.dads.epsilon) == (10, 10, 1e6, 1, 1e-4)
    assert (c.droop.K_P, c.droop.K_Q, c.droop.P0, c.droop.Q0) == (5e-3, 1e-4, 1, 0.5)
    assert (c.droop.omega_pc, c.droop.omega_qc, c.droop.xi_p) == (332.8, 732.8, 1.2)
    assert (c.safety.I_max, c.safety.c) == (1.2, 1e9)
    assert (c.solver.rel_tol, c.solver.abs_tol, c.solver.max_step) == (1e-7, 1e-9, 1e-4)
    assert c.grid.steps == ((0.0, 1.0, 0.0), (2.0, 0.0, 0.0), (4.0, 1.0, 0.0))


def test_round_trip():
    c = ScenarioConfig(controller="pi", t_end=1.5)
    assert from_dict(to_dict(c)) == c


def test_yaml_file(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("controller: pi\nsafety: {enabled: true}\ndroop: {Q_bar: .inf}\ngrid: {steps: [[0, 1, 0]]}\n")
    c = load_config(p)
    assert c.controller == "pi" and c.safety.enabled and math.isinf(c.droop.Q_bar)
    assert load_config(None) == ScenarioConfig()
    assert load_config(_write(tmp_path, dump_config(c))) == c


def _write(d, text):
    p = d / "x.yaml"
    p.write_text(text)
    return p


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"dads": {"Gama_d": 1.0}},
    {"grid": {"steps": [[0, 1, 0]], "extra": 1}},
    {"initial": {"foo": 1}},
    {"output": {"dx": 1}},
])
def test_unknown_keys_rejected(data):
    with pytest.raises(ConfigError):
        from_dict(data)


@pytest.mark.parametrize("data", [
    {"controller": "lqr"},
    {"t_end": -1},
    {"dads": {"epsilon": 0}},
    {"droop": {"xi_q": 0.9}},
    {"droop": {"Q_bar": "inf"}},           # filter off needs a finite Q_bar
    {"safety": {"enabled": "yes"}},
    {"grid": {"steps": [[1, 1, 0]]}},      # must cover t = 0
    {"grid": {"steps": [[0, 1, 0], [0, 0, 0]]}},
    {"solver": {"method": "euler"}},
    {"initial": {"mode": "cold"}},
    {"initial": {"v_c": [1, 2, 3]}},
])
def test_invalid_values_rejected(data):
    with pytest.raises(ConfigError):
        from_dict(data)


def test_with_value_and_aliases():
    c = ScenarioConfig()
    assert c.with_value("dads.epsilon", 1e-2).dads.epsilon == 1e-2
    g = c.with_value("dads.Gamma", 1e4).dads
    assert g.Gamma_d == g.Gamma_q == 1e4
    assert c.with_value("t_end", 2).t_end == 2.0
    with pytest.raises(ConfigError):
        c.with_value("dads.nope", 1)
    with pytest.raises(ConfigError):
        c.with_value("grid.steps", 1)


def test_grid_profile_breakpoints():
    g = GridProfile()
    assert g.breakpoints == (2.0, 4.0)
    assert g.magnitude_bound == 1.0
