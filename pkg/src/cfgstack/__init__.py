"""Stacking ensemble of GNNs over control-flow graphs, with edge-level explanations."""

__version__ = "0.1.0"
