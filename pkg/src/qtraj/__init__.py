"""Quantum trajectory simulation of open systems: photon counting and homodyne unravelings with exact oracles."""

__version__ = "0.1.0"
