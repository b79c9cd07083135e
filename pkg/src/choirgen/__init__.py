"""Chord-conditioned four-part chorale harmonization with controllable
harmonicity."""

__version__ = "0.1.0"
