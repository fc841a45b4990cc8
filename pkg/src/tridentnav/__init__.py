"""Strapdown INS/GNSS navigation with trident quaternions."""
__version__ = "0.1.0"
