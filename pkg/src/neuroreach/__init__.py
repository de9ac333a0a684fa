"""Learned-subsystem microgrid verification: ODE-Net model discovery,
physics-data composition, and conformance-corrected zonotope reachability."""

__version__ = "0.1.0"
