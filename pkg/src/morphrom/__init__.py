"""2D elasticity-based mesh morphing with reduced-order and regression tools."""

__version__ = "0.1.0"
