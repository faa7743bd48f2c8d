"""Synthesis and verification of safety controllers for human-robot collaboration."""

__version__ = "0.1.0"
