"""Safe multi-agent navigation: learned distance/cost critics, roadmap search and CBS."""

__version__ = "0.1.0"
