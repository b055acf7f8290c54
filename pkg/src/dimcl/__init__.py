"""Dimensional contrastive learning: InfoNCE across feature columns as an SSL regularizer."""

__version__ = "0.1.0"
