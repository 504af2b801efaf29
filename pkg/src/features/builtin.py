"""
Builtin detector/descriptor pair.

Detector: smaller eigenvalue of the structure tensor with 3x3 local-maximum
suppression. Descriptor: 16x16 patch normalised to zero mean and unit
variance, flattened and L2-normalised (d = 256).
"""

from typing import List, Sequence

import cv2
import numpy as np
from scipy import ndimage

from .base import FeaturePlugin
from .types import DescriptorSet, Keypoint, keypoint_xy


def detect_builtin(image: np.ndarray, k: int, quality_level: float = 0.01) -> List[Keypoint]:
    """
    Up to k strongest corner responses after 3x3 local-maximum suppression.

    Responses below quality_level * max response are ignored, so flat
    images yield no keypoints.
    """
    if k < 1:
        raise ValueError(f"Keypoint budget must be >= 1, got {k}")
    img = np.ascontiguousarray(image, dtype=np.float32)
    response = cv2.cornerMinEigenVal(img, blockSize=3, ksize=3)
    peak = float(response.max()) if response.size else 0.0
    if peak <= 0:
        return []

    local_max = response == ndimage.maximum_filter(response, size=3, mode='constant',
                                                   cval=-np.inf)
    candidates = local_max & (response >= quality_level * peak) & (response > 0)
    ys, xs = np.nonzero(candidates)
    scores = response[ys, xs]
    order = np.lexsort((xs, ys, -scores))[:k]
    return [Keypoint(float(xs[i]), float(ys[i]), float(scores[i])) for i in order]


def describe_builtin(image: np.ndarray, keypoints: Sequence[Keypoint],
                     patch_size: int = 16) -> DescriptorSet:
    """
    Normalised-patch descriptors. Keypoints without a full patch inside the
    image, or on a perfectly flat patch, are dropped.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    half = patch_size // 2
    if len(keypoints) == 0:
        return DescriptorSet.empty(patch_size * patch_size)

    xy = np.rint(keypoint_xy(keypoints)).astype(np.int64)
    x0 = xy[:, 0] - half
    y0 = xy[:, 1] - half
    inside = (x0 >= 0) & (y0 >= 0) & (x0 + patch_size <= w) & (y0 + patch_size <= h)

    windows = np.lib.stride_tricks.sliding_window_view(img, (patch_size, patch_size))
    idx = np.flatnonzero(inside)
    patches = windows[y0[idx], x0[idx]].reshape(len(idx), patch_size * patch_size)
    patches = patches - patches.mean(axis=1, keepdims=True)
    std = patches.std(axis=1)
    textured = std > 1e-8
    idx = idx[textured]
    vectors = patches[textured] / std[textured, None]
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)

    kept = set(idx.tolist())
    dropped = [i for i in range(len(keypoints)) if i not in kept]
    return DescriptorSet(
        keypoints=[keypoints[i] for i in idx],
        vectors=vectors.astype(np.float32),
        dropped=dropped,
    )


class BuiltinPlugin(FeaturePlugin):
    """Corner detector + normalised patch descriptor."""

    name = "builtin"

    def __init__(self, patch_size: int = 16, quality_level: float = 0.01):
        self.patch_size = patch_size
        self.quality_level = quality_level

    def detect(self, image: np.ndarray, k: int) -> List[Keypoint]:
        return detect_builtin(image, k, self.quality_level)

    def describe(self, image: np.ndarray, keypoints: Sequence[Keypoint]) -> DescriptorSet:
        return describe_builtin(image, keypoints, self.patch_size)
