"""
Repeatability rate, matching score and mean matching accuracy.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import NoSharedView
from ..features import Keypoint, MatchSet, keypoint_xy
from .ground_truth import GroundTruth

logger = logging.getLogger(__name__)

MMA_DEFINITIONS = ('standard', 'possible')


@dataclass
class SharedView:
    in_a: np.ndarray    # bool per a-keypoint
    in_b: np.ndarray    # bool per b-keypoint

    @property
    def count(self) -> int:
        return int(min(self.in_a.sum(), self.in_b.sum()))


@dataclass
class MatchingResult:
    ms: float
    mma: float
    n_matches: int
    n_correct: int
    mma_undefined: bool = False


def shared_view(kps_a: Sequence[Keypoint], kps_b: Sequence[Keypoint], gt: GroundTruth) -> SharedView:
    return SharedView(gt.shared_a(keypoint_xy(kps_a)), gt.shared_b(keypoint_xy(kps_b)))


def _shared_count(view: SharedView) -> int:
    if view.count == 0:
        raise NoSharedView(
            f"Shared view holds {int(view.in_a.sum())} a-keypoint(s) and "
            f"{int(view.in_b.sum())} b-keypoint(s)"
        )
    return view.count


def repeatable_pairs(kps_a: Sequence[Keypoint], kps_b: Sequence[Keypoint], gt: GroundTruth,
                     tol: float = 3.0, view: Optional[SharedView] = None) -> int:
    """
    Greedy one-to-one pairing of shared-view keypoints: a-keypoints in
    descending score order each take their nearest unpaired b-keypoint
    within tol after transport.
    """
    view = view or shared_view(kps_a, kps_b, gt)
    ia = np.flatnonzero(view.in_a)
    ib = np.flatnonzero(view.in_b)
    if len(ia) == 0 or len(ib) == 0:
        return 0
    moved = gt.forward(keypoint_xy(kps_a)[ia])
    dist = cdist(moved, keypoint_xy(kps_b)[ib])
    scores = np.array([kps_a[i].score for i in ia])
    taken = np.zeros(len(ib), dtype=bool)
    count = 0
    for row in np.argsort(-scores, kind='stable'):
        d = np.where(taken, np.inf, dist[row])
        j = int(np.argmin(d))
        if d[j] <= tol:
            taken[j] = True
            count += 1
    return count


def repeatability(kps_a: Sequence[Keypoint], kps_b: Sequence[Keypoint], gt: GroundTruth,
                  tol: float = 3.0) -> float:
    """
    Repeatable pairs divided by the smaller shared-view keypoint count.

    Raises:
        NoSharedView: when either image has no keypoint in the shared view
    """
    view = shared_view(kps_a, kps_b, gt)
    denom = _shared_count(view)
    return repeatable_pairs(kps_a, kps_b, gt, tol, view) / denom


def correct_mask(matches: MatchSet, kps_a: Sequence[Keypoint], kps_b: Sequence[Keypoint],
                 gt: GroundTruth, tol: float = 3.0) -> np.ndarray:
    """Matches whose transported a-keypoint lies within tol of the matched b-keypoint."""
    if len(matches) == 0:
        return np.zeros(0, dtype=bool)
    moved = gt.forward(keypoint_xy(kps_a)[matches.index_a])
    err = np.linalg.norm(moved - keypoint_xy(kps_b)[matches.index_b], axis=1)
    return np.nan_to_num(err, nan=np.inf) <= tol


def matching_metrics(matches: MatchSet, kps_a: Sequence[Keypoint], kps_b: Sequence[Keypoint],
                     gt: GroundTruth, tol: float = 3.0,
                     definition: str = 'standard') -> MatchingResult:
    """
    MS = correct / min shared-view count.
    MMA = correct / putative matches ('standard') or correct / repeatable
    pairs ('possible'), capped at 1. Zero putative matches give MMA 0 with
    the undefined flag set.
    """
    if definition not in MMA_DEFINITIONS:
        raise ValueError(f"MMA definition must be one of {MMA_DEFINITIONS}")
    view = shared_view(kps_a, kps_b, gt)
    denom = _shared_count(view)
    n_correct = int(correct_mask(matches, kps_a, kps_b, gt, tol).sum())
    n_matches = len(matches)

    if definition == 'standard':
        possible = n_matches
    else:
        possible = repeatable_pairs(kps_a, kps_b, gt, tol, view)
    undefined = possible == 0
    mma = 0.0 if undefined else min(1.0, n_correct / possible)
    if undefined:
        logger.debug("MMA undefined (no putative matches); reported as 0")
    return MatchingResult(
        ms=min(1.0, n_correct / denom),
        mma=mma,
        n_matches=n_matches,
        n_correct=n_correct,
        mma_undefined=undefined,
    )
