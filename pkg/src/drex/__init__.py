"""Explainable multimodal recommender with review attention and GRU entity states."""

__version__ = "0.1.0"
