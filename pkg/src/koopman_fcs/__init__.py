"""Koopman-model finite-control-set MPC for an inverter-fed IPMSM."""

__version__ = "0.1.0"
