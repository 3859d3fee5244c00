"""Test-time adaptation for point-goal visual navigation under per-frame image corruption."""

__version__ = "0.1.0"
