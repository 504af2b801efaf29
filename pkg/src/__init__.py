"""
Non-Rigid Keypoint Detection toolkit

Trains a descriptor-specialised keypoint detector from synthetic
thin-plate-spline deformations and evaluates it on image matching
and retrieval.
"""

__version__ = "1.0.0"
__author__ = "Image Matching Team"
