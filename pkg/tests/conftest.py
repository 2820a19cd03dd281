import numpy as np
import pytest

from gfmguard.config import ScenarioConfig
from gfmguard.engine import SIGNAL_NAMES, Trajectory, state_names

# criterion number -> (passed, description); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k}: {text}")


def synthetic_trajectory(t, cfg=None, is_step=None, segments=None, **cols):
    """Trajectory with zero-filled columns except the ones given."""
    cfg = cfg or ScenarioConfig(t_end=float(t[-1]))
    t = np.asarray(t, dtype=float)
    columns = {"t": t}
    for name in (*state_names(cfg), *SIGNAL_NAMES):
        columns[name] = np.asarray(cols.pop(name, np.zeros_like(t)), dtype=float) * np.ones_like(t)
    if cols:
        raise KeyError(f"unknown columns {sorted(cols)}")
    if is_step is None:
        is_step = np.ones(t.size, dtype=bool)
    return Trajectory(cfg, columns, np.asarray(is_step), segments or [(float(t[0]), float(t[-1]))], t.size)


@pytest.fixture
def make_traj():
    return synthetic_trajectory
