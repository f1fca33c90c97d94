"""Equilibria of a multi-provider wireless access market with segmented user views."""

__version__ = "0.1.0"
