"""Stealthy sensor-attack simulation for a two-heater thermal process."""
from .plant import PlantParams, discrete_model
from .synthesis import design
from .detect import DetectorConfig

__version__ = "0.1.0"
__all__ = ["PlantParams", "discrete_model", "design", "DetectorConfig"]
