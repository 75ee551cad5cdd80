"""Change-analysis engine for software change management."""

__version__ = "0.1.0"
