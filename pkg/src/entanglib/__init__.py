"""Simulated bipartite states, entanglement labels and learned entanglement estimators."""

__version__ = "0.1.0"
