"""Discrete speech unit quantisation and phone/tone probing toolkit."""

__version__ = "0.1.0"
