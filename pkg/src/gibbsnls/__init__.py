"""Gibbs measures and invariance for Galerkin-truncated NLS on the disc, plus zonal S^3 tools."""

__version__ = "0.1.0"
