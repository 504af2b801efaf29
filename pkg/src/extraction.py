"""
Score map to keypoints: non-maximum suppression, score threshold, edge
response filter and top-k selection.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .features import Keypoint
from .model import DetectorNet, predict_score_map

logger = logging.getLogger(__name__)


@dataclass
class ExtractConfig:
    """Post-processing of the score map."""
    nms_window: int = 5
    edge_ratio: float = 10.0
    min_score: float = 0.2
    top_k: int = 1024
    subpixel: bool = True

    def __post_init__(self):
        if self.nms_window < 3 or self.nms_window % 2 == 0:
            raise ValueError("extract.nms_window must be odd and >= 3")
        if self.edge_ratio <= 0:
            raise ValueError("extract.edge_ratio must be > 0")
        if not 0 <= self.min_score <= 1:
            raise ValueError("extract.min_score must be in [0, 1]")
        if self.top_k < 1:
            raise ValueError("extract.top_k must be >= 1")


def _tie_suppressed(S: np.ndarray, window: int) -> np.ndarray:
    """True where a lexicographically earlier pixel in the window has the same value."""
    h, w = S.shape
    half = window // 2
    padded = np.pad(S, half, mode='constant', constant_values=np.nan)
    out = np.zeros(S.shape, dtype=bool)
    for dy in range(-half, 1):
        for dx in range(-half, half + 1):
            if dy == 0 and dx >= 0:
                break
            shifted = padded[half + dy:half + dy + h, half + dx:half + dx + w]
            out |= shifted == S
    return out


def _refine(S: np.ndarray, x: int, y: int) -> tuple:
    """Per-axis parabola through the 3x3 neighbourhood, offset clamped to +-0.5."""
    h, w = S.shape
    offsets = []
    for lo, c, hi, inside in (
        (S[y, x - 1] if x > 0 else None, S[y, x], S[y, x + 1] if x < w - 1 else None, 0 < x < w - 1),
        (S[y - 1, x] if y > 0 else None, S[y, x], S[y + 1, x] if y < h - 1 else None, 0 < y < h - 1),
    ):
        if not inside:
            offsets.append(0.0)
            continue
        denom = lo - 2.0 * c + hi
        d = 0.5 * (lo - hi) / denom if denom != 0 else 0.0
        offsets.append(float(np.clip(d, -0.5, 0.5)))
    return x + offsets[0], y + offsets[1]


def nms(S: np.ndarray, window: int = 5, subpixel: bool = True) -> List[Keypoint]:
    """
    Keep pixels equal to the maximum of their window x window neighbourhood
    whose neighbourhood is not flat. Among equal maxima only the
    lexicographically smallest (row, col) survives.

    Returns keypoints in row-major order, scored by the map value.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"NMS window must be odd and >= 3, got {window}")
    S = np.asarray(S, dtype=np.float64)
    mx = ndimage.maximum_filter(S, size=window, mode='constant', cval=-np.inf)
    mn = ndimage.minimum_filter(S, size=window, mode='constant', cval=np.inf)
    keep = (S == mx) & (mx > mn) & ~_tie_suppressed(S, window)

    out = []
    for y, x in zip(*np.nonzero(keep)):
        if subpixel:
            fx, fy = _refine(S, x, y)
        else:
            fx, fy = float(x), float(y)
        out.append(Keypoint(fx, fy, float(S[y, x])))
    return out


def hessian_at(S: np.ndarray, xs, ys) -> tuple:
    """(dxx, dyy, dxy) at integer pixels by central differences, edge-replicated at the border."""
    P = np.pad(np.asarray(S, dtype=np.float64), 1, mode='edge')
    cy, cx = np.asarray(ys) + 1, np.asarray(xs) + 1
    c = P[cy, cx]
    dxx = P[cy, cx + 1] - 2 * c + P[cy, cx - 1]
    dyy = P[cy + 1, cx] - 2 * c + P[cy - 1, cx]
    dxy = (P[cy + 1, cx + 1] - P[cy + 1, cx - 1] - P[cy - 1, cx + 1] + P[cy - 1, cx - 1]) / 4.0
    return dxx, dyy, dxy


def edge_filter(S: np.ndarray, keypoints: Sequence[Keypoint], r: float = 10.0) -> List[Keypoint]:
    """
    Drop keypoints on ridges or saddles: reject when det(H) <= 0 or
    trace(H)^2 / det(H) >= (r + 1)^2 / r.
    """
    if r <= 0:
        raise ValueError(f"Edge ratio must be > 0, got {r}")
    if len(keypoints) == 0:
        return []
    h, w = np.shape(S)
    xs = np.clip(np.rint([k.x for k in keypoints]), 0, w - 1).astype(np.int64)
    ys = np.clip(np.rint([k.y for k in keypoints]), 0, h - 1).astype(np.int64)
    dxx, dyy, dxy = hessian_at(S, xs, ys)
    det = dxx * dyy - dxy * dxy
    trace = dxx + dyy
    bound = (r + 1.0) ** 2 / r
    with np.errstate(divide='ignore', invalid='ignore'):
        ok = (det > 0) & (trace ** 2 / np.where(det > 0, det, 1.0) < bound)
    return [k for k, keep in zip(keypoints, ok) if keep]


def sort_keypoints(keypoints: Sequence[Keypoint]) -> List[Keypoint]:
    """Descending score; ties by (y, x)."""
    return sorted(keypoints, key=lambda k: (-k.score, k.y, k.x))


def extract(S: np.ndarray, cfg: Optional[ExtractConfig] = None) -> List[Keypoint]:
    """nms -> score >= min_score -> edge_filter -> sort by score -> top_k."""
    cfg = cfg or ExtractConfig()
    candidates = nms(S, cfg.nms_window, cfg.subpixel)
    candidates = [k for k in candidates if k.score >= cfg.min_score]
    candidates = edge_filter(S, candidates, cfg.edge_ratio)
    return sort_keypoints(candidates)[:cfg.top_k]


class NetworkDetector:
    """Trained score-map network plus extraction, usable wherever a detector is expected."""

    name = 'network'

    def __init__(self, model: DetectorNet, cfg: Optional[ExtractConfig] = None):
        self.model = model
        self.cfg = cfg or ExtractConfig()

    def score_map(self, image: np.ndarray) -> np.ndarray:
        return predict_score_map(self.model, image)

    def detect(self, image: np.ndarray, k: Optional[int] = None) -> List[Keypoint]:
        cfg = replace(self.cfg, top_k=k) if k else self.cfg
        return extract(self.score_map(image), cfg)
