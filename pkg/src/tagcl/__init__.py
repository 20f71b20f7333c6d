"""Contrastive node embeddings for text-attributed graphs with a high-frequency-aware spectral loss."""

__version__ = "0.1.0"
