"""Deterministic federated-learning simulation for multi-center classification."""

__version__ = "0.1.0"
