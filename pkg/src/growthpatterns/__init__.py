"""Clustering of longitudinal child-growth trajectories.

K-means and Gaussian-mixture EM over per-visit measurement vectors,
cross-algorithm agreement, growth-pattern curves and percentile charts,
plus a synthetic cohort generator for end-to-end checks.
"""

from growthpatterns.errors import DataError, GrowthPatternsError, NumericError

__version__ = "0.1.0"

__all__ = ["DataError", "GrowthPatternsError", "NumericError", "__version__"]
