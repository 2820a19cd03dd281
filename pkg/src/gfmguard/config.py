"""Scenario configuration: dataclasses, YAML loading, validation.

A scenario file is YAML with these top-level tables (every key optional,
defaults shown by ``gfmguard defaults``)::

    t_end: 6.0
    controller: dads            # dads | pi
    physical: {omega_b, C_f, L_f, R_f, L, R}
    droop:    {V0, omega0, P0, Q0, K_P, K_Q, xi_p, xi_q, omega_pc, omega_qc, P_bar, Q_bar}
    dads:     {K_VC, K_CC, mu_d, mu_q, Gamma_d, Gamma_q, epsilon}
    pi:       {Kp_cc, Ki_cc, Kf_cc, Kp_vc, Ki_vc, Kf_vc}
    safety:   {enabled, I_max, c}
    grid:     {steps: [[t, v_D, v_Q], ...]}     # piecewise constant in the DQ frame
    initial:  {mode: steady|flat, v_c, i_t, i_g, filters, theta, z, pi}
    solver:   {method: radau5|dopri5, rel_tol, abs_tol, max_step, min_step, first_step}
    output:   {dt}

Unknown keys anywhere are rejected. ``.inf`` (or the string ``inf``) is
accepted for the power-filter saturation limits.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .controllers import DadsParams, PiParams
from .integrators import SolverSettings
from .plant import PhysicalParams
from .power_droop import DroopParams
from .safety import SafetyParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridProfile:
    """Piecewise-constant grid voltage in the global frame.

    ``steps`` holds ``(t_start, v_D, v_Q)`` rows sorted by time; each value holds
    from its start time until the next row. The default is a 1 p.u. grid with
    a bolted three-phase fault on ``[2, 4)`` s.
    """

    steps: tuple[tuple[float, float, float], ...] = ((0.0, 1.0, 0.0), (2.0, 0.0, 0.0), (4.0, 1.0, 0.0))

    def __post_init__(self):
        if not self.steps:
            raise ConfigError("grid profile needs at least one step")
        times = [s[0] for s in self.steps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("grid step times must be strictly increasing")
        for row in self.steps:
            if len(row) != 3 or not all(math.isfinite(v) for v in row):
                raise ConfigError(f"bad grid step {row!r}; expected finite [t, v_D, v_Q]")

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(s[0] for s in self.steps[1:])

    @property
    def magnitude_bound(self) -> float:
        return max(math.hypot(s[1], s[2]) for s in self.steps)


@dataclass(frozen=True)
class InitialConditions:
    """Initial state recipe.

    ``steady`` starts from the pre-disturbance operating point: PCC voltage on
    its droop reference, active power at ``P0`` (so the frequency sits at
    ``omega0``), currents at their sinusoidal steady state and PI integrators
    pre-loaded. ``flat`` starts from ``v_c = (1, 0)``, zero currents and
    ``theta = 0``. Filter states default to the equilibrium of the initial
    measured powers. Any explicit field overrides the recipe.
    """

    mode: str = "steady"
    v_c: tuple[float, float] | None = None
    i_t: tuple[float, float] | None = None
    i_g: tuple[float, float] | None = None
    filters: tuple[float, float, float, float] | None = None
    theta: float | None = None
    z: tuple[float, float] = (0.0, 0.0)
    pi: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.mode not in ("steady", "flat"):
            raise ConfigError(f"initial.mode must be 'steady' or 'flat', got {self.mode!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    t_end: float = 6.0
    controller: str = "dads"
    physical: PhysicalParams = field(default_factory=PhysicalParams)
    droop: DroopParams = field(default_factory=DroopParams)
    dads: DadsParams = field(default_factory=DadsParams)
    pi: PiParams = field(default_factory=PiParams)
    safety: SafetyParams = field(default_factory=SafetyParams)
    grid: GridProfile = field(default_factory=GridProfile)
    initial: InitialConditions = field(default_factory=InitialConditions)
    solver: SolverSettings = field(default_factory=SolverSettings)
    output_dt: float = 1e-3

    def __post_init__(self):
        if self.controller not in ("dads", "pi"):
            raise ConfigError(f"controller must be 'dads' or 'pi', got {self.controller!r}")
        if not (self.t_end > 0.0 and math.isfinite(self.t_end)):
            raise ConfigError("t_end must be positive and finite")
        if not self.output_dt > 0.0:
            raise ConfigError("output.dt must be positive")
        if self.grid.steps[0][0] > 0.0:
            raise ConfigError("the first grid step must start at or before t = 0")
        if not self.safety.enabled and math.isinf(self.droop.Q_bar):
            raise ConfigError("Q_bar must be finite when the safety filter is disabled")

    @property
    def controller_states(self) -> tuple[str, ...]:
        return ("z_d", "z_q") if self.controller == "dads" else ("gamma_d", "gamma_q", "beta_d", "beta_q")

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_value(self, key: str, value: Any) -> "ScenarioConfig":
        """Return a copy with one dotted key (``"dads.epsilon"``) changed.

        ``dads.Gamma`` and ``dads.mu`` set both the d- and q-axis parameters.
        """
        data = to_dict(self)
        section, _, name = key.rpartition(".")
        targets = [name]
        if section == "dads" and name in ("Gamma", "mu"):
            targets = [f"{name}_d", f"{name}_q"]
        node = data
        for part in filter(None, section.split(".")):
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown parameter {key!r}")
            node = node[part]
        for tgt in targets:
            if tgt not in node or isinstance(node[tgt], (dict, list)):
                raise ConfigError(f"unknown parameter {key!r}")
            node[tgt] = value
        return from_dict(data)


_SECTIONS = {
    "physical": PhysicalParams,
    "droop": DroopParams,
    "dads": DadsParams,
    "pi": PiParams,
    "safety": SafetyParams,
    "solver": SolverSettings,
}


def _float(value: Any, where: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", ".inf"):
        return math.inf
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {value!r}") from None


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        default = known[key].default
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{key}: expected true/false")
            kwargs[key] = value
        elif isinstance(default, str):
            kwargs[key] = str(value)
        elif value is None:
            kwargs[key] = None
        else:
            kwargs[key] = _float(value, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _vec(value, n: int, where: str):
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ConfigError(f"{where}: expected a list of {n} numbers")
    return tuple(_float(v, where) for v in value)


def from_dict(data: dict | None) -> ScenarioConfig:
    data = dict(data or {})
    top = {"t_end", "controller", "grid", "initial", "output", *_SECTIONS}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build(cls, data[name], name)
    if "t_end" in data:
        kwargs["t_end"] = _float(data["t_end"], "t_end")
    if "controller" in data:
        kwargs["controller"] = str(data["controller"])
    if "grid" in data:
        grid = data["grid"]
        if not isinstance(grid, dict) or set(grid) - {"steps"}:
            raise ConfigError("grid: only the 'steps' key is allowed")
        if "steps" in grid:
            steps = tuple(_vec(row, 3, "grid.steps") for row in grid["steps"])
            kwargs["grid"] = GridProfile(steps)
    if "initial" in data:
        init = data["initial"]
        if not isinstance(init, dict):
            raise ConfigError("initial: expected a table")
        allowed = {f.name for f in dataclasses.fields(InitialConditions)}
        if set(init) - allowed:
            raise ConfigError(f"initial: unknown keys {sorted(set(init) - allowed)}")
        sizes = {"v_c": 2, "i_t": 2, "i_g": 2, "filters": 4, "z": 2, "pi": 4}
        ic = {k: _vec(v, sizes[k], f"initial.{k}") for k, v in init.items() if k in sizes}
        if "z" in ic and ic["z"] is None:
            del ic["z"]
        if init.get("theta") is not None:
            ic["theta"] = _float(init["theta"], "initial.theta")
        if "mode" in init:
            ic["mode"] = str(init["mode"])
        kwargs["initial"] = InitialConditions(**ic)
    if "output" in data:
        out = data["output"]
        if not isinstance(out, dict) or set(out) - {"dt"}:
            raise ConfigError("output: only the 'dt' key is allowed")
        if "dt" in out:
            kwargs["output_dt"] = _float(out["dt"], "output.dt")
    try:
        return ScenarioConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def to_dict(cfg: ScenarioConfig) -> dict:
    """Plain-data echo of a configuration; ``from_dict(to_dict(c)) == c``."""
    data: dict[str, Any] = {"t_end": cfg.t_end, "controller": cfg.controller}
    for name in _SECTIONS:
        data[name] = dataclasses.asdict(getattr(cfg, name))
    data["grid"] = {"steps": [list(s) for s in cfg.grid.steps]}
    init = dataclasses.asdict(cfg.initial)
    data["initial"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in init.items()}
    data["output"] = {"dt": cfg.output_dt}
    return data


def load_config(path: str | Path | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return from_dict(data)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
