"""Cascaded keypoint-head Siamese tracker with shrinking heatmap supervision."""

__version__ = "0.1.0"
