"""Discrete-event 6TiSCH simulator with a deadline-aware scheduling function."""

from .core import PRESETS, SimConfig, preset_config
from .network import Network, RunResult, simulate

__all__ = ["PRESETS", "SimConfig", "preset_config", "Network", "RunResult", "simulate"]
