"""Off-grid Doppler detection in Gaussian and compound-Gaussian clutter."""

from .kernels import BACKEND
from .scenario import ScenarioConfig, scenario_preset
from .whitening import Whitener

__all__ = ["BACKEND", "ScenarioConfig", "Whitener", "scenario_preset"]
__version__ = "0.1.0"
