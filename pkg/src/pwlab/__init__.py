"""Pilot-wave (Bohmian) interferometer lab: analytic mode calculus, two-time
statistics, spectral wave-packet dynamics and trajectory ensembles."""

__version__ = "0.1.0"
