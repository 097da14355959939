"""Desk-scale workbench for neural joint spatial/tempo-spectral filters and oracle MVDR baselines."""

__version__ = "0.1.0"
