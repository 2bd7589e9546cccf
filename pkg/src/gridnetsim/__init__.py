"""Communication-network simulation and resilience analysis over synthetic power grids."""

__version__ = "0.1.0"
