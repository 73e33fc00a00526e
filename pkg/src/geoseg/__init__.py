"""Building segmentation from multiscale RGB imagery."""

__version__ = "0.1.0"
