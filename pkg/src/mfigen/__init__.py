"""Physics-regularized generative modeling of magnetic field images."""

__version__ = "0.1.0"
