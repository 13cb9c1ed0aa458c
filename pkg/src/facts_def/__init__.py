"""Transient simulation and dissipating-energy-flow analysis of series and shunt FACTS devices."""

__version__ = "0.1.0"
