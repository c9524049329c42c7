"""Bidirectional molecule/text diffusion with a token-aware noise schedule."""

__version__ = "0.1.0"
