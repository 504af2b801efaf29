"""
Nearest-neighbour ratio-test matching.
"""

from typing import Union

import numpy as np
from scipy.spatial.distance import cdist

from .types import DescriptorSet, MatchSet

Descriptors = Union[DescriptorSet, np.ndarray]


def _vectors(d: Descriptors) -> np.ndarray:
    v = d.vectors if isinstance(d, DescriptorSet) else d
    return np.asarray(v, dtype=np.float64)


def match_ratio(da: Descriptors, db: Descriptors, ratio: float = 0.8,
                mutual: bool = False) -> MatchSet:
    """
    One-directional nearest-neighbour matching with the distance ratio test.

    For each row of da the nearest and second-nearest rows of db are found
    by Euclidean distance; ties go to the lower db index. A pair is kept
    iff d1 / d2 < ratio. With a single db row the test passes (ratio 0);
    with d2 == 0 the ratio is 1 and the pair is rejected.

    Args:
        da, db: DescriptorSets or (n, d) arrays
        ratio: threshold in (0, 1]
        mutual: additionally require a to be b's nearest neighbour

    Returns:
        MatchSet with unique index_a entries, in index_a order
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"Ratio must be in (0, 1], got {ratio}")
    va, vb = _vectors(da), _vectors(db)
    if len(va) == 0 or len(vb) == 0:
        return MatchSet.empty()
    if va.shape[1] != vb.shape[1]:
        raise ValueError(f"Descriptor dims differ: {va.shape[1]} vs {vb.shape[1]}")

    dist = cdist(va, vb)
    order = np.argsort(dist, axis=1, kind='stable')
    rows = np.arange(len(va))
    nn = order[:, 0]
    d1 = dist[rows, nn]
    if len(vb) == 1:
        ratios = np.zeros(len(va))
    else:
        d2 = dist[rows, order[:, 1]]
        with np.errstate(divide='ignore', invalid='ignore'):
            ratios = np.where(d2 > 0, d1 / np.where(d2 > 0, d2, 1.0), 1.0)

    keep = ratios < ratio
    if mutual:
        back = np.argsort(dist, axis=0, kind='stable')[0]
        keep &= back[nn] == rows

    idx = np.flatnonzero(keep)
    return MatchSet(
        index_a=idx.astype(np.int64),
        index_b=nn[idx].astype(np.int64),
        distance=d1[idx],
        ratio=ratios[idx],
    )
