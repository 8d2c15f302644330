"""Reinforcement-learning beam selection for multi-panel mmWave cells, with a TTI-level system simulator."""
from .config import SimConfig, desk_preset, load_config, parse_config, full_preset
from .harness import Simulation, run_experiment
from .metrics import MetricsReport, compare, geometric_mean

__all__ = ["SimConfig", "desk_preset", "full_preset", "load_config", "parse_config", "Simulation",
           "run_experiment", "MetricsReport", "compare", "geometric_mean"]
__version__ = "0.1.0"
