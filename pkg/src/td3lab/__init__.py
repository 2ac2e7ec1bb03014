"""Actor-critic laboratory: TD3 and its ablations, tabular clipped double Q-learning, bias diagnostics."""

__version__ = "0.1.0"
