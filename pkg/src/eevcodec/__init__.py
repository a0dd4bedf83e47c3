"""Learned end-to-end video coding toolkit (EEV-0.1 .. EEV-0.4 verification models)."""

__version__ = "0.1.0"
