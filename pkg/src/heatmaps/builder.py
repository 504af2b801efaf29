"""
Matching-heatmap ground truth.

For a triplet (A, B, B') with warps g: A->B and g': A->B', the correct ratio-test
matches A<->B and A<->B' mark binary peaks on every image. The anchor map is
the mean of its two binary maps. Each view map is the mean of the anchor map
carried into that view and the view's own binary map, so weights are
multiples of 0.25.

Carrying the anchor map into a view transports A's weighted peaks by
coordinates, rounded to the nearest pixel. Peaks are rendered with a
max-composited 3x3 Gaussian whose center equals the peak weight.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..data.synth import TrainingTriplet, load_triplet, read_manifest
from ..errors import DatasetFormatError, EmptyHeatmap
from ..features import FeaturePlugin, Keypoint, MatchSet, keypoint_budget, keypoint_xy, match_ratio
from ..geometry.warps import CompositeWarp, apply_warp
from ..utils.conversions import read_gray, write_gray
from ..utils.hashing import config_hash

logger = logging.getLogger(__name__)

PeakDict = Dict[Tuple[int, int], float]


@dataclass
class HeatmapConfig:
    """Ground-truth construction settings."""
    budget_fraction: float = 0.02        # k = fraction * H * W
    max_keypoints: Optional[int] = None  # fixed budget overriding the fraction
    ratio: float = 0.8
    tol: float = 3.0
    sigma: float = 1.5
    weighting: str = 'graded'            # 'graded' or 'equal'
    mutual: bool = False

    def __post_init__(self):
        if self.weighting not in ('graded', 'equal'):
            raise ValueError(f"heatmap.weighting must be 'graded' or 'equal', got '{self.weighting}'")
        if not 0 < self.ratio <= 1:
            raise ValueError("heatmap.ratio must be in (0, 1]")
        if self.tol < 0 or self.sigma <= 0:
            raise ValueError("heatmap.tol must be >= 0 and heatmap.sigma > 0")

    def budget(self, shape: Tuple[int, int]) -> int:
        if self.max_keypoints:
            return int(self.max_keypoints)
        return keypoint_budget(shape, self.budget_fraction)


@dataclass
class MatchingHeatmap:
    """Rendered heatmap with the weighted integer peaks it was rendered from."""
    values: np.ndarray
    peaks: np.ndarray                       # (n, 2) int (x, y)
    weights: np.ndarray                     # (n,)

    def __len__(self) -> int:
        return len(self.peaks)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def peak_coords(self) -> List[Tuple[int, int, float]]:
        return [(int(x), int(y), float(w)) for (x, y), w in zip(self.peaks, self.weights)]

    def peak_dict(self) -> PeakDict:
        return {(int(x), int(y)): float(w) for (x, y), w in zip(self.peaks, self.weights)}


@dataclass
class CorrectMatchSet:
    """Keypoint locations that produced correct matches (the sets C_i)."""
    points_a: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    points_b: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    index_a: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    index_b: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.index_a)

    @staticmethod
    def _pixels(points: np.ndarray) -> np.ndarray:
        if len(points) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        return np.unique(np.rint(points).astype(np.int64), axis=0)

    @property
    def pixels_a(self) -> np.ndarray:
        return self._pixels(self.points_a)

    @property
    def pixels_b(self) -> np.ndarray:
        return self._pixels(self.points_b)


# =============================================================================
# Core operations
# =============================================================================

def correct_matches(matches: MatchSet, kps_a: Sequence[Keypoint], kps_b: Sequence[Keypoint],
                    g: CompositeWarp, tol: float = 3.0) -> CorrectMatchSet:
    """
    Keep ratio-surviving pairs (i, j) with ||g(kps_a[i]) - kps_b[j]|| <= tol.
    """
    if len(matches) == 0:
        return CorrectMatchSet()
    pa = keypoint_xy(kps_a)[matches.index_a]
    pb = keypoint_xy(kps_b)[matches.index_b]
    err = np.linalg.norm(apply_warp(g, pa) - pb, axis=1)
    ok = err <= tol
    return CorrectMatchSet(pa[ok], pb[ok], matches.index_a[ok], matches.index_b[ok])


def gaussian_kernel3(sigma: float = 1.5) -> np.ndarray:
    """3x3 Gaussian with center value 1."""
    d = np.arange(-1, 2)
    dx, dy = np.meshgrid(d, d)
    return np.exp(-(dx ** 2 + dy ** 2) / (2.0 * sigma ** 2))


def render_peaks(peaks: np.ndarray, weights: np.ndarray, shape: Tuple[int, int],
                 sigma: float = 1.5) -> np.ndarray:
    """
    Max-composite a 3x3 Gaussian bump per peak; the center value equals the
    peak weight and values never exceed the largest weight.

    Args:
        peaks: (n, 2) integer (x, y) inside shape
        weights: (n,) values in [0, 1]
        shape: (H, W)
    """
    out = np.zeros(shape, dtype=np.float32)
    peaks = np.asarray(peaks, dtype=np.int64).reshape(-1, 2)
    if len(peaks) == 0:
        return out
    weights = np.asarray(weights, dtype=np.float64)
    kernel = gaussian_kernel3(sigma)
    h, w = shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            xs = peaks[:, 0] + dx
            ys = peaks[:, 1] + dy
            inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            vals = (weights[inside] * kernel[dy + 1, dx + 1]).astype(np.float32)
            np.maximum.at(out, (ys[inside], xs[inside]), vals)
    return out


def transport_peaks(peaks: PeakDict, g: CompositeWarp, valid: np.ndarray) -> PeakDict:
    """
    Move weighted A-peaks into the target frame, rounding to the nearest
    pixel. Peaks landing outside the image or on invalid pixels are dropped;
    colliding peaks keep the larger weight.
    """
    if not peaks:
        return {}
    keys = list(peaks)
    moved = np.rint(apply_warp(g, np.array(keys, dtype=np.float64))).astype(np.int64)
    h, w = valid.shape
    out: PeakDict = {}
    for key, (x, y) in zip(keys, moved):
        if 0 <= x < w and 0 <= y < h and valid[y, x]:
            out[(int(x), int(y))] = max(out.get((int(x), int(y)), 0.0), peaks[key])
    return out


def _binary(pixels: np.ndarray, valid: Optional[np.ndarray] = None) -> PeakDict:
    out: PeakDict = {}
    for x, y in pixels:
        if valid is not None:
            h, w = valid.shape
            if not (0 <= x < w and 0 <= y < h and valid[y, x]):
                continue
        out[(int(x), int(y))] = 1.0
    return out


def average_peaks(first: PeakDict, second: PeakDict) -> PeakDict:
    """(first + second) / 2 over the union of keys, capped at 1."""
    return {k: min(1.0, (first.get(k, 0.0) + second.get(k, 0.0)) / 2.0)
            for k in sorted(set(first) | set(second))}


def _to_heatmap(peaks: PeakDict, shape: Tuple[int, int], cfg: HeatmapConfig) -> MatchingHeatmap:
    keys = sorted(peaks, key=lambda p: (p[1], p[0]))
    coords = np.array(keys, dtype=np.int64).reshape(-1, 2)
    weights = np.array([peaks[k] for k in keys], dtype=np.float64)
    if cfg.weighting == 'equal':
        weights = np.ones_like(weights)
    return MatchingHeatmap(render_peaks(coords, weights, shape, cfg.sigma), coords, weights)


@dataclass
class TripletGroundTruth:
    """Everything the builder derives from one triplet."""
    heatmap_b: MatchingHeatmap
    heatmap_bp: MatchingHeatmap
    peaks_a: PeakDict
    cross_view: np.ndarray      # (m, 4) int xb, yb, xbp, ybp of A-peaks seen in both views
    correct_b: CorrectMatchSet
    correct_bp: CorrectMatchSet


def build_triplet_ground_truth(triplet: TrainingTriplet, plugin: FeaturePlugin,
                               cfg: Optional[HeatmapConfig] = None) -> TripletGroundTruth:
    """
    Detect, describe, ratio-match and compose the weighted heatmaps.

    Raises:
        EmptyHeatmap: when either view heatmap ends up without peaks
    """
    cfg = cfg or HeatmapConfig()
    shape = triplet.shape
    k = cfg.budget(shape)

    da = plugin.detect_and_describe(triplet.anchor, k)
    db = plugin.detect_and_describe(triplet.warped_1, k)
    dbp = plugin.detect_and_describe(triplet.warped_2, k)

    c1 = correct_matches(match_ratio(da, db, cfg.ratio, cfg.mutual),
                         da.keypoints, db.keypoints, triplet.warp_1, cfg.tol)
    c2 = correct_matches(match_ratio(da, dbp, cfg.ratio, cfg.mutual),
                         da.keypoints, dbp.keypoints, triplet.warp_2, cfg.tol)

    m_a = average_peaks(_binary(c1.pixels_a), _binary(c2.pixels_a))
    m_b = average_peaks(transport_peaks(m_a, triplet.warp_1, triplet.validity_1),
                        _binary(c1.pixels_b, triplet.validity_1))
    m_bp = average_peaks(transport_peaks(m_a, triplet.warp_2, triplet.validity_2),
                         _binary(c2.pixels_b, triplet.validity_2))
    logger.debug(f"Peaks: A={len(m_a)} B={len(m_b)} B'={len(m_bp)} "
                 f"(correct {len(c1)}/{len(c2)})")

    if not m_b or not m_bp:
        raise EmptyHeatmap(
            f"No correct matches survived (B: {len(m_b)} peaks, B': {len(m_bp)} peaks)"
        )

    return TripletGroundTruth(
        heatmap_b=_to_heatmap(m_b, shape, cfg),
        heatmap_bp=_to_heatmap(m_bp, shape, cfg),
        peaks_a=m_a,
        cross_view=_cross_view_links(m_a, triplet),
        correct_b=c1,
        correct_bp=c2,
    )


def build_triplet_heatmaps(triplet: TrainingTriplet, plugin: FeaturePlugin,
                           cfg: Optional[HeatmapConfig] = None
                           ) -> Tuple[MatchingHeatmap, MatchingHeatmap]:
    """(B heatmap, B' heatmap) for a triplet. Raises EmptyHeatmap when either is empty."""
    gt = build_triplet_ground_truth(triplet, plugin, cfg)
    return gt.heatmap_b, gt.heatmap_bp


def _cross_view_links(peaks_a: PeakDict, triplet: TrainingTriplet) -> np.ndarray:
    if not peaks_a:
        return np.zeros((0, 4), dtype=np.int64)
    pts = np.array(list(peaks_a), dtype=np.float64)
    qb = np.rint(apply_warp(triplet.warp_1, pts)).astype(np.int64)
    qbp = np.rint(apply_warp(triplet.warp_2, pts)).astype(np.int64)
    h, w = triplet.shape

    def visible(q, valid):
        inside = (q[:, 0] >= 0) & (q[:, 0] < w) & (q[:, 1] >= 0) & (q[:, 1] < h)
        ok = inside.copy()
        ok[inside] = valid[q[inside, 1], q[inside, 0]]
        return ok

    both = visible(qb, triplet.validity_1) & visible(qbp, triplet.validity_2)
    return np.concatenate([qb[both], qbp[both]], axis=1)


# =============================================================================
# Persistence
# =============================================================================

def sidecar_path(png_path: Union[str, Path]) -> Path:
    return Path(png_path).with_suffix('.json')


def save_heatmap(path: Union[str, Path], heatmap: MatchingHeatmap) -> None:
    """16-bit PNG (value = round(65535 v)) plus a JSON sidecar of peaks and weights."""
    write_gray(path, heatmap.values, bits=16)
    doc = {
        'shape': list(heatmap.shape),
        'peaks': heatmap.peaks.tolist(),
        'weights': [float(w) for w in heatmap.weights],
    }
    with open(sidecar_path(path), 'w') as f:
        json.dump(doc, f)


def load_heatmap_peaks(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, Tuple[int, int]]:
    """Read the sidecar: (peaks, weights, shape)."""
    side = sidecar_path(path)
    if not side.exists():
        raise DatasetFormatError("Heatmap sidecar not found", side)
    try:
        with open(side, 'r') as f:
            doc = json.load(f)
        peaks = np.array(doc['peaks'], dtype=np.int64).reshape(-1, 2)
        weights = np.array(doc['weights'], dtype=np.float64)
        shape = (int(doc['shape'][0]), int(doc['shape'][1]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(f"Malformed heatmap sidecar: {e}", side) from e
    if len(peaks) != len(weights):
        raise DatasetFormatError("Heatmap sidecar peaks/weights length mismatch", side)
    return peaks, weights, shape


def load_heatmap(path: Union[str, Path], sigma: float = 1.5) -> MatchingHeatmap:
    """
    Load a heatmap. Values are re-rendered from the sidecar; the PNG is only
    read to confirm it exists and matches the sidecar's shape.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetFormatError("Heatmap image not found", path)
    peaks, weights, shape = load_heatmap_peaks(path)
    stored = read_gray(path)
    if stored.shape != shape:
        raise DatasetFormatError(f"Heatmap PNG shape {stored.shape} != sidecar {shape}", path)
    return MatchingHeatmap(render_peaks(peaks, weights, shape, sigma), peaks, weights)


HEATMAP_FILES = ('MH_B.png', 'MH_Bp.png')
CROSS_VIEW_FILE = 'cross_view.json'
INDEX_FILE = 'heatmaps.json'


def _clear_outputs(d: Path) -> None:
    for name in HEATMAP_FILES:
        for p in (d / name, sidecar_path(d / name)):
            p.unlink(missing_ok=True)
    (d / CROSS_VIEW_FILE).unlink(missing_ok=True)


def _gt_job(args) -> Tuple[str, Optional[TripletGroundTruth], Optional[str]]:
    pair_id, directory, plugin, cfg = args
    triplet = load_triplet(directory)
    try:
        return pair_id, build_triplet_ground_truth(triplet, plugin, cfg), None
    except EmptyHeatmap as e:
        return pair_id, None, str(e)


def _write_ground_truth(d: Path, gt: TripletGroundTruth) -> None:
    save_heatmap(d / HEATMAP_FILES[0], gt.heatmap_b)
    save_heatmap(d / HEATMAP_FILES[1], gt.heatmap_bp)
    with open(d / CROSS_VIEW_FILE, 'w') as f:
        json.dump({'links': gt.cross_view.tolist()}, f)


def build_dataset_heatmaps(dataset_dir: Union[str, Path], plugin: FeaturePlugin,
                           cfg: Optional[HeatmapConfig] = None, jobs: int = 1) -> Dict:
    """
    Build both view heatmaps for every triplet listed in the manifest.

    Triplets without correct matches are skipped with a log line and any
    stale heatmaps for them removed. Reruns produce identical files.

    Returns:
        Index dictionary (also written to heatmaps.json)
    """
    cfg = cfg or HeatmapConfig()
    root = Path(dataset_dir)
    ids = read_manifest(root)['ids']
    tasks = [(pair_id, root / 'pairs' / pair_id, plugin, cfg) for pair_id in ids]

    built: List[str] = []
    skipped: Dict[str, str] = {}
    peak_counts: Dict[str, List[int]] = {}

    def consume(results):
        for pair_id, gt, reason in tqdm(results, total=len(tasks), desc="Ground truth"):
            d = root / 'pairs' / pair_id
            _clear_outputs(d)
            if gt is None:
                logger.info(f"Skipping triplet {pair_id}: {reason}")
                skipped[pair_id] = reason
                continue
            _write_ground_truth(d, gt)
            built.append(pair_id)
            peak_counts[pair_id] = [len(gt.heatmap_b), len(gt.heatmap_bp)]

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            consume(pool.map(_gt_job, tasks))
    else:
        consume(map(_gt_job, tasks))

    index = {
        'built': built,
        'skipped': skipped,
        'peaks': peak_counts,
        'plugin': plugin.name,
        'config_hash': config_hash(cfg),
    }
    with open(root / INDEX_FILE, 'w') as f:
        json.dump(index, f, indent=2, sort_keys=True)
    logger.info(f"Built heatmaps for {len(built)} triplet(s), skipped {len(skipped)}")
    return index


def read_heatmap_index(dataset_dir: Union[str, Path]) -> Dict:
    path = Path(dataset_dir) / INDEX_FILE
    if not path.exists():
        raise DatasetFormatError("Heatmap index not found; run build-gt first", path)
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"Malformed heatmap index: {e}", path) from e
