"""Point-cloud restoration with a pseudo-query dual transformer, plus degradation generators and metrics."""

__version__ = "0.1.0"
