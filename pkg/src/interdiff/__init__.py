"""Equilibrium interacting diffusions on a torus: Gibbs sampling, SDE dynamics,
form/generator identity checks and the density-fluctuation scaling limit."""

__version__ = "0.1.0"
