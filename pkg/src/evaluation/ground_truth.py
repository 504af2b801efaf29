"""
Ground-truth correspondence between the two images of an evaluation pair.

A pair carries either a warp (warp.json) or dense correspondence rows
(corr.csv with columns xa, ya, xb, yb).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.interpolate import LinearNDInterpolator

from ..errors import DatasetFormatError
from ..geometry.warps import CompositeWarp, apply_warp, invert_points, load_warp
from ..utils.conversions import read_gray, read_mask


class GroundTruth:
    """Maps a-coordinates to b and back, and decides shared-view membership."""

    shape_a: Tuple[int, int]
    shape_b: Tuple[int, int]
    valid_a: Optional[np.ndarray] = None
    valid_b: Optional[np.ndarray] = None

    def forward(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def _visible(points: np.ndarray, shape: Tuple[int, int],
                 valid: Optional[np.ndarray]) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        h, w = shape
        finite = np.all(np.isfinite(points), axis=1)
        ok = finite.copy()
        ok[finite] = ((points[finite, 0] >= 0) & (points[finite, 0] <= w - 1)
                      & (points[finite, 1] >= 0) & (points[finite, 1] <= h - 1))
        if valid is not None and np.any(ok):
            px = np.rint(points[ok]).astype(np.int64)
            ok[ok] = valid[px[:, 1], px[:, 0]]
        return ok

    def shared_a(self, points_a: np.ndarray) -> np.ndarray:
        """a-points whose transported location lies inside b's bounds and mask."""
        if len(points_a) == 0:
            return np.zeros(0, dtype=bool)
        return self._visible(self.forward(points_a), self.shape_b, self.valid_b)

    def shared_b(self, points_b: np.ndarray) -> np.ndarray:
        if len(points_b) == 0:
            return np.zeros(0, dtype=bool)
        return self._visible(self.backward(points_b), self.shape_a, self.valid_a)


class WarpGroundTruth(GroundTruth):
    """Ground truth from a composite warp a -> b."""

    def __init__(self, warp: CompositeWarp, shape_a: Tuple[int, int],
                 shape_b: Optional[Tuple[int, int]] = None,
                 valid_a: Optional[np.ndarray] = None, valid_b: Optional[np.ndarray] = None):
        self.warp = warp
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b or shape_a)
        self.valid_a = valid_a
        self.valid_b = valid_b

    def forward(self, points: np.ndarray) -> np.ndarray:
        return apply_warp(self.warp, points, strict=False)

    def backward(self, points: np.ndarray) -> np.ndarray:
        src, _ = invert_points(self.warp, points)
        return src


class CorrespondenceGroundTruth(GroundTruth):
    """
    Ground truth from dense correspondence rows, linearly interpolated over
    their Delaunay triangulation; points outside the hull map to NaN.
    """

    def __init__(self, rows: np.ndarray, shape_a: Tuple[int, int], shape_b: Tuple[int, int],
                 valid_a: Optional[np.ndarray] = None, valid_b: Optional[np.ndarray] = None):
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
        if len(rows) < 3:
            raise ValueError("At least 3 correspondence rows are required")
        self.rows = rows
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        self.valid_a = valid_a
        self.valid_b = valid_b
        self._fwd = LinearNDInterpolator(rows[:, :2], rows[:, 2:])
        self._bwd = LinearNDInterpolator(rows[:, 2:], rows[:, :2])

    def forward(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self._fwd(np.asarray(points, dtype=np.float64).reshape(-1, 2)))

    def backward(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self._bwd(np.asarray(points, dtype=np.float64).reshape(-1, 2)))


@dataclass
class EvalPair:
    pair_id: str
    image_a: np.ndarray
    image_b: np.ndarray
    gt: GroundTruth


def read_correspondences(path: Union[str, Path]) -> np.ndarray:
    try:
        frame = pd.read_csv(path)
        rows = frame[['xa', 'ya', 'xb', 'yb']].to_numpy(dtype=np.float64)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, KeyError, ValueError) as e:
        raise DatasetFormatError(f"Malformed correspondence file: {e}", path) from e
    if not np.all(np.isfinite(rows)):
        raise DatasetFormatError("Non-finite correspondence rows", path)
    return rows


def load_eval_pair(directory: Union[str, Path]) -> EvalPair:
    """
    Load `a.png`, `b.png` and `warp.json` or `corr.csv`; `valid_a.png` and
    `valid_b.png` are optional.

    Raises:
        DatasetFormatError: missing or malformed file, naming its path
    """
    d = Path(directory)
    for name in ('a.png', 'b.png'):
        if not (d / name).exists():
            raise DatasetFormatError(f"Missing pair image {name}", d / name)
    try:
        image_a = read_gray(d / 'a.png')
        image_b = read_gray(d / 'b.png')
    except (OSError, ValueError) as e:
        raise DatasetFormatError(f"Unreadable pair image: {e}", d) from e
    valid_a = read_mask(d / 'valid_a.png') if (d / 'valid_a.png').exists() else None
    valid_b = read_mask(d / 'valid_b.png') if (d / 'valid_b.png').exists() else None

    if (d / 'warp.json').exists():
        try:
            warp = load_warp(d / 'warp.json')
        except ValueError as e:
            raise DatasetFormatError(f"Malformed warp: {e}", d / 'warp.json') from e
        gt = WarpGroundTruth(warp, image_a.shape, image_b.shape, valid_a, valid_b)
    elif (d / 'corr.csv').exists():
        try:
            gt = CorrespondenceGroundTruth(read_correspondences(d / 'corr.csv'),
                                           image_a.shape, image_b.shape, valid_a, valid_b)
        except ValueError as e:
            raise DatasetFormatError(str(e), d / 'corr.csv') from e
    else:
        raise DatasetFormatError("Pair has neither warp.json nor corr.csv", d)
    return EvalPair(d.name, image_a, image_b, gt)


def list_pairs(dataset_dir: Union[str, Path]):
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DatasetFormatError("Evaluation dataset not found", root)
    pairs = sorted(p for p in root.iterdir() if p.is_dir() and p.name not in ('viz', 'plots'))
    if not pairs:
        raise DatasetFormatError("Evaluation dataset has no pair directories", root)
    return pairs
