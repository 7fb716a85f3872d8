"""Decentralized vertical federated clustering through identifier-level consensus."""

__version__ = "0.1.0"
