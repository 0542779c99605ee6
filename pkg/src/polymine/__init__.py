"""Parallel-corpus mining and evaluation over precomputed multilingual embeddings."""

__version__ = "0.1.0"
