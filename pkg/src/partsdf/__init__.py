"""Part-based signed-distance-field shape modeling toolkit."""

__version__ = "0.1.0"
