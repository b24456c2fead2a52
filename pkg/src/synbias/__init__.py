"""Ordered-neuron and dependency-graph inductive biases on a small numpy autodiff core."""

__version__ = "0.1.0"
