"""Modular deep RL: components, staged/define-by-run graphs, DQN and a distributed runner."""
__version__ = "0.1.0"
