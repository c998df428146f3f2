"""Relation-network meta-learning for speaker verification and few-shot
speaker identification."""

__version__ = "0.1.0"
