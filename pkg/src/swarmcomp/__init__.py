"""Swarm composition toolkit: symbolic score model, agent loops, and structure analysis."""

__version__ = "0.1.0"
