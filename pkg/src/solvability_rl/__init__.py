"""Solvability-aware compute allocation: profiling, shaped rewards, GRPO in a synthetic world."""

__version__ = "0.1.0"
