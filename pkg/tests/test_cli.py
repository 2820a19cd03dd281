import csv
import json

import numpy as np
import pytest
import yaml

from gfmguard.cli import SIGNAL_COLUMNS, csv_columns, main
from gfmguard.config import ScenarioConfig
from gfmguard.engine import PLANT_NAMES

SHORT = {"t_end": 0.02, "grid": {"steps": [[0, 1, 0]]}}


def _write(tmp_path, data, name="s.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_csv_column_order():
    cols = csv_columns(ScenarioConfig())
    assert cols[:11] == ("t", *PLANT_NAMES)
    assert cols[11:14] == ("theta", "z_d", "z_q")
    assert cols[14:] == SIGNAL_COLUMNS
    pi = csv_columns(ScenarioConfig(controller="pi"))
    assert pi[12:16] == ("gamma_d", "gamma_q", "beta_d", "beta_q")


def test_smoke_run(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--set", "t_end=0.001", "--out", str(out)]) == 0
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == csv_columns(ScenarioConfig())
    assert len(rows) - 1 >= 2
    assert float(rows[-1][0]) == pytest.approx(0.001)
    summary = json.loads((out / "summary.json").read_text())
    for key in ("final_state", "N_eta", "T_eta", "max_i_t", "scenario"):
        assert key in summary
    echo = yaml.safe_load((out / "scenario.yaml").read_text())
    assert echo["t_end"] == 0.001


def test_csv_round_trips_bit_for_bit(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--set", "t_end=0.001", "--out", str(out)]) == 0
    data = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    from gfmguard.engine import integrate

    traj, _ = integrate(ScenarioConfig(t_end=0.001))
    np.testing.assert_array_equal(data[:, 1], traj["vcd"])
    np.testing.assert_array_equal(data[:, -1], traj["v_t_nominal_q"])


def test_run_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--set", "t_end=0.001", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()


@pytest.mark.parametrize(
    "data",
    [
        {"bogus": 1},
        {"dads": {"K_VC": 10, "nope": 2}},
        {"controller": "mpc"},
        {"droop": {"Q_bar": ".inf"}},
        {"initial": {"mode": "warm"}},
    ],
)
def test_bad_config_exit_2(tmp_path, data, capsys):
    assert main(["run", "--config", _write(tmp_path, data), "--out", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_bad_set_and_missing_file_exit_2(tmp_path):
    assert main(["run", "--set", "dads.nope=1", "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--set", "t_end", "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_gain_overflow_exit_3(tmp_path, capsys):
    cfg = _write(tmp_path, {"t_end": 0.01, "initial": {"z": [701, 0]}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "aborted" in capsys.readouterr().err


def test_defaults_round_trip(capsys):
    assert main(["defaults"]) == 0
    from gfmguard.config import from_dict

    assert from_dict(yaml.safe_load(capsys.readouterr().out)) == ScenarioConfig()


def test_single_value_sweep_matches_run(tmp_path):
    cfg = _write(tmp_path, {"t_end": 0.002})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    assert main(["sweep", "--config", cfg, "--param", "dads.epsilon", "--values", "1e-4",
                 "--out", str(tmp_path / "s"), "--jobs", "1"]) == 0
    sub = tmp_path / "s" / "dads.epsilon=1e-4"
    assert (sub / "trajectory.csv").read_bytes() == (tmp_path / "r" / "trajectory.csv").read_bytes()
    with open(tmp_path / "s" / "sweep_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and float(rows[0]["value"]) == 1e-4
    assert float(rows[0]["max_i_t"]) > 0.9


def test_sweep_unknown_parameter_exit_2(tmp_path):
    assert main(["sweep", "--param", "dads.nope", "--values", "1,2", "--out", str(tmp_path / "s")]) == 2


def test_sweep_gamma_sets_both_axes(tmp_path):
    cfg = _write(tmp_path, {"t_end": 0.001})
    assert main(["sweep", "--config", cfg, "--param", "dads.Gamma", "--values", "1e5,1e6",
                 "--out", str(tmp_path / "s"), "--no-csv", "--jobs", "1"]) == 0
    echo = yaml.safe_load((tmp_path / "s" / "dads.Gamma=1e5" / "scenario.yaml").read_text())
    assert echo["dads"]["Gamma_d"] == echo["dads"]["Gamma_q"] == 1e5
    assert not (tmp_path / "s" / "dads.Gamma=1e5" / "trajectory.csv").exists()


def test_short_verify_passes(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "--config", _write(tmp_path, SHORT), "--out", str(out),
                 "--skip-oracles", "--jobs", "1"]) == 0
    report = json.loads((out / "verify_report.json").read_text())
    assert report["pass"] is True
    assert set(report["scenarios"]) == {"dads", "safe-dads", "pi", "safe-pi"}
    names = {c["name"] for c in report["scenarios"]["safe-pi"]["checks"]}
    assert "current_invariance" in names


def test_verify_negative_control_exit_1(tmp_path):
    # the inverter starts at ~1 p.u. current, twice the limit; pulling it back
    # at rate c needs steps below the default floor
    data = dict(SHORT, safety={"I_max": 0.5}, solver={"min_step": 1e-14})
    out = tmp_path / "v"
    assert main(["verify", "--config", _write(tmp_path, data), "--out", str(out),
                 "--skip-oracles", "--jobs", "1"]) == 1
    report = json.loads((out / "verify_report.json").read_text())
    failed = {(s, c["name"]) for s, body in report["scenarios"].items() for c in body["checks"] if not c["pass"]}
    assert ("safe-dads", "current_invariance") in failed
    assert ("safe-pi", "current_invariance") in failed
