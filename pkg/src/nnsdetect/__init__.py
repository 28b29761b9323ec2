"""Non-nutritive sucking detection: synthetic data, stabilized flow, clip recognition, segmentation, metrics."""

__version__ = "0.1.0"
