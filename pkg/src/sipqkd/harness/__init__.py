from .config import ScenarioConfig, load_config, load_preset, parse_config, serialize_config
from .session import SessionReport, run_session, sweep_scenarios

__all__ = [
    "ScenarioConfig",
    "SessionReport",
    "load_config",
    "load_preset",
    "parse_config",
    "run_session",
    "serialize_config",
    "sweep_scenarios",
]
