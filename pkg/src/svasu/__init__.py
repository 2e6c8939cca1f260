"""Two-order sparse unmixing with an in-situ spectral variability library."""

__version__ = "0.1.0"
