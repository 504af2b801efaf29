"""
Abstract base class for detector/descriptor plugins.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .types import DescriptorSet, Keypoint


@dataclass
class PluginSpec:
    """How to obtain a detector/descriptor pair."""
    name: str = "builtin"
    kind: str = "builtin"            # "builtin" or "external"
    command: Optional[str] = None    # external command template
    timeout: float = 120.0           # seconds, external only

    def __post_init__(self):
        if self.kind not in ("builtin", "external"):
            raise ValueError(f"Unknown plugin kind: {self.kind}")
        if self.kind == "external" and not self.command:
            raise ValueError(f"External plugin '{self.name}' needs a command template")


class FeaturePlugin(ABC):
    """
    Interface for base detector/descriptor pairs.

    Implementations must provide:
    - keypoint detection with a budget
    - description at given keypoint locations
    """

    name: str = "plugin"

    @abstractmethod
    def detect(self, image: np.ndarray, k: int) -> List[Keypoint]:
        """
        Detect up to k keypoints.

        Args:
            image: (H, W) float grayscale in [0, 1]
            k: keypoint budget

        Returns:
            Keypoints sorted by score, descending
        """
        pass

    @abstractmethod
    def describe(self, image: np.ndarray, keypoints: Sequence[Keypoint]) -> DescriptorSet:
        """
        Describe the given keypoints. Keypoints that cannot be described are
        left out and their input indices recorded in DescriptorSet.dropped.
        """
        pass

    def detect_and_describe(self, image: np.ndarray, k: int) -> DescriptorSet:
        return self.describe(image, self.detect(image, k))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name='{self.name}')"
