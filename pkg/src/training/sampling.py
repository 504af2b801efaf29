"""Balanced positive/negative sampling masks."""

from typing import Optional

import numpy as np
from scipy import ndimage

from ..errors import InsufficientNegatives
from ..heatmaps import MatchingHeatmap


def sample_negative_mask(heatmap: MatchingHeatmap, rng: np.random.Generator,
                         valid: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Mask F with the n peak centers plus n zero-valued pixels drawn without
    replacement, away from the 3x3 neighbourhoods of the peaks and inside
    `valid` when given.

    Raises:
        InsufficientNegatives: fewer than n eligible pixels
    """
    shape = heatmap.values.shape
    positives = np.zeros(shape, dtype=bool)
    if len(heatmap.peaks):
        positives[heatmap.peaks[:, 1], heatmap.peaks[:, 0]] = True
    n = int(positives.sum())
    if n == 0:
        raise ValueError("Heatmap has no peaks to balance")

    eligible = (heatmap.values == 0) & ~ndimage.binary_dilation(positives, np.ones((3, 3), bool))
    if valid is not None:
        eligible &= valid.astype(bool)
    candidates = np.flatnonzero(eligible)
    if len(candidates) < n:
        raise InsufficientNegatives(f"{len(candidates)} eligible negatives for {n} positives")

    mask = positives.ravel().copy()
    mask[rng.choice(candidates, size=n, replace=False)] = True
    return mask.reshape(shape)
