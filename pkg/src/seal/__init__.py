"""Multi-robot exploration with Gaussian-process map sharing and RSSI relative localization."""

from .config import ConfigError, ScenarioConfig, default_scenario, load_scenario, parse_scenario
from .metrics import RunReport
from .world import Pose2D, WorldMap

__all__ = ["ConfigError", "Pose2D", "RunReport", "ScenarioConfig", "WorldMap",
           "default_scenario", "load_scenario", "parse_scenario", "run_simulation"]

__version__ = "0.1.0"


def run_simulation(cfg, out_dir=None, **kw):
    from .sim import run_simulation as _run
    return _run(cfg, out_dir, **kw)
