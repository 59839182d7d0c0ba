"""Partitioned FSI for a pressurized hyperelastic tube."""

__version__ = "0.1.0"
