"""Feature-based image registration with cellular-automata shape modelling."""

__version__ = "0.1.0"
