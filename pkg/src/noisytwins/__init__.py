"""Noise-augmented class embeddings with a twin cross-correlation loss, in a toy conditional GAN."""

__version__ = "0.1.0"
