"""Frequency-support coordination between DFIG inertial response and governors."""

__version__ = "0.1.0"
