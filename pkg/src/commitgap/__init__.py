"""Deterministic simulator of hard kills between a table write's data phase and its metadata commit."""

from .clock import VirtualClock
from .store import ObjectStore

__all__ = ["ObjectStore", "VirtualClock"]
__version__ = "0.1.0"
