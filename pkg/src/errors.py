"""
Exception hierarchy.

Every error raised on purpose by the toolkit derives from NrkdError so the
CLI can turn it into a single machine-parsable line.
"""

from typing import Optional, Union
from pathlib import Path


class NrkdError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(NrkdError):
    """Invalid or unknown configuration entries."""


# Geometry
class SingularSystem(NrkdError):
    """TPS control points are degenerate (collinear or duplicated)."""


class ProjectiveDivideByZero(NrkdError):
    """A homography sent a point to the line at infinity."""


class NonInvertibleWarp(NrkdError):
    """Inverse-mapping search failed for too many pixels."""


# Features
class PluginProtocolError(NrkdError):
    """An external plugin violated the exchange format."""


class PluginTimeout(NrkdError):
    """An external plugin exceeded its wall-clock limit."""


# Ground truth
class EmptyHeatmap(NrkdError):
    """No correct matches survived for a triplet."""


# Model
class Unimplemented(NrkdError):
    """Reserved model variant."""


class ShapeError(NrkdError):
    """Input spatial shape incompatible with the network."""


class ConfigMismatch(NrkdError):
    """Weight file was written for a different model configuration."""


class CorruptFile(NrkdError):
    """Weight or exchange file is truncated or malformed."""


# Training
class InsufficientNegatives(NrkdError):
    """Not enough zero-valued pixels to balance the positives."""


class DegenerateTarget(NrkdError):
    """Matching heatmap is zero under the sampling mask."""


class NoActivePatches(NrkdError):
    """No peakiness patch overlaps a nonzero heatmap pixel."""


class EmptyDataset(NrkdError):
    """No usable training samples."""


class TrainingDiverged(NrkdError):
    """Loss became non-finite."""


# Evaluation / retrieval
class NoSharedView(NrkdError):
    """No keypoint of one image falls inside the other image's view."""


class DatasetFormatError(NrkdError):
    """A dataset file is missing or malformed."""

    def __init__(self, message: str, path: Optional[Union[str, Path]] = None):
        self.path = str(path) if path is not None else None
        if self.path:
            message = f"{message} [{self.path}]"
        super().__init__(message)


class MetricsMismatch(NrkdError):
    """Recount oracle disagrees with the fast metric path."""


class InsufficientDescriptors(NrkdError):
    """Fewer descriptors than requested visual words."""
