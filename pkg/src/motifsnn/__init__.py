"""Spiking networks with gene-expression weight parameterization, trained with
surrogate gradients and evaluated under simulated device mismatch."""

__version__ = "0.1.0"
