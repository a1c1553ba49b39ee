"""Personalised list continuation with graph convolutions, hyperlink prediction and a causal Transformer."""

__version__ = "0.1.0"
