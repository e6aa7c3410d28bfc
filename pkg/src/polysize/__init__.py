"""Size bounds for neural networks that learn polynomial dynamical systems."""

__version__ = "0.1.0"
