"""Multi-reference render-and-compare 6-DoF pose refinement."""

__version__ = "0.1.0"
