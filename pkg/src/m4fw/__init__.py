"""Shared N-encoder/1-backbone/M-generator foundation model run as a firmware service."""

__version__ = "0.1.0"
