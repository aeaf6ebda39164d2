"""Probabilistic transfer of multi-qubit states through imperfect Bell channels."""

__version__ = "0.1.0"
