"""Coherent-population-trapping line shapes in wall-coated cells with partially
elastic atom-wall collisions."""

from .core import PhysicalParams, BlochVector

__version__ = "0.1.0"

__all__ = ["PhysicalParams", "BlochVector", "__version__"]
