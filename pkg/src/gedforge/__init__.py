"""Graph edit distance solvers and a CNN-based GED approximator."""

__version__ = "0.1.0"
