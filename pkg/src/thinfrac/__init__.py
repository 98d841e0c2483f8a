"""Numerical lab for the thin one- and two-phase problem with fractional diffusion."""
__version__ = "0.1.0"
