"""Hanoi-type fractal quantum graphs: resistance, spectra and heat kernels."""

__version__ = "0.1.0"
