"""Multimodal feature extraction for meme sentiment classification."""

__version__ = "0.1.0"
