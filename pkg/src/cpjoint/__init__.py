"""Bayesian joint model for longitudinal trajectories with a random change point bounded by the event time."""

__version__ = "0.1.0"
