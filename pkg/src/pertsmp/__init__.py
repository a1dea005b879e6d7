"""Asymptotic expansions for perturbed discrete-time semi-Markov processes with absorption."""

__version__ = "0.1.0"
