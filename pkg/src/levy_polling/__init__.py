"""
Levy Polling - Stability, stationary transforms and simulation of Lévy-driven cyclic polling systems
"""

__version__ = "1.0.0"
__author__ = "APE-147"
__description__ = "Stability, stationary transforms and simulation of Lévy-driven cyclic polling systems"

from .core.model import PollingModel, QueueSpec, Tolerances
from .core.mtjbp import PollingAnalyzer
from .services.simulator import SimConfig, SimulationService

__all__ = [
    "PollingModel",
    "QueueSpec",
    "Tolerances",
    "PollingAnalyzer",
    "SimConfig",
    "SimulationService",
]
