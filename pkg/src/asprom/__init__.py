"""Active-subspace PROM databases and flutter-constrained design optimization."""

__version__ = "0.1.0"
