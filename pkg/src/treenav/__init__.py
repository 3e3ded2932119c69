"""Reinforcement-learning navigation over tree-structured documents."""

__version__ = "0.1.0"
