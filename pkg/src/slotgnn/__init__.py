"""Heterogeneous GNN with multi-slot sequential node representations."""

__version__ = "0.1.0"
