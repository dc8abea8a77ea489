"""Renormalization of Gevrey vector fields on the d-torus."""

__version__ = "0.1.0"
