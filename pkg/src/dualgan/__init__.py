"""Dual-form GAN discriminators: exact duals for linear scorers and
trust-region score linearization for nonlinear ones."""

__version__ = "0.1.0"
