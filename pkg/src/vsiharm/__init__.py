"""Harmonics in inverter current-controller outputs as a device on-state resistance monitor."""

__version__ = "0.1.0"
