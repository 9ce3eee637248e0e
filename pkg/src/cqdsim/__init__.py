"""Monte Carlo spin-flip simulation of the Frisch-Segre experiment."""

__version__ = "0.1.0"
