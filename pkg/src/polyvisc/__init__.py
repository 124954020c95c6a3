"""Physics-enforced neural networks for polymer melt viscosity."""

__version__ = "0.1.0"
