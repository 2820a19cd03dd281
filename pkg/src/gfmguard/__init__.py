"""Grid-forming inverter simulation with adaptive backstepping control and a CBF current limiter."""

from .analysis import CheckReport
from .config import ConfigError, ScenarioConfig, load_config
from .engine import IntegrationAbort, Trajectory, closed_loop_rhs, integrate
from .safety import SafetyEventLog

__all__ = [
    "CheckReport",
    "ConfigError",
    "IntegrationAbort",
    "SafetyEventLog",
    "ScenarioConfig",
    "Trajectory",
    "closed_loop_rhs",
    "integrate",
    "load_config",
]
__version__ = "0.1.0"
