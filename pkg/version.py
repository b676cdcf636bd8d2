"""Version information for the ReID post-processing engine."""

__version__ = "0.4.0"
