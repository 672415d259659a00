"""Spectral-Galerkin simulation and rare-event analysis for 1D slow-fast
stochastic reaction-diffusion systems."""

__version__ = "0.1.0"
