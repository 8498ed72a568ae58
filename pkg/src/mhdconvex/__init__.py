"""Convex-integration construction and verification toolkit for stochastic MHD on T^3."""

__version__ = "0.1.0"
