"""Mixup contrastive learning for time-series representations."""

__version__ = "0.1.0"
