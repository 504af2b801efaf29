"""
Benchmark runner over a directory of image pairs.

Per pair: detect (fixed budget), describe, ratio-match, score RR / MS /
MMA. Writes pairs.csv, report.json, viz/<pair>.png and plots/*.png.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..errors import MetricsMismatch, NoSharedView
from ..features import FeaturePlugin, Keypoint, MatchSet, match_ratio
from ..plotters import MatchPlotter, MetricsPlotter
from ..styles.themes import PlotStyle
from .ground_truth import EvalPair, GroundTruth, list_pairs, load_eval_pair
from .metrics import MMA_DEFINITIONS, correct_mask, matching_metrics, repeatability, repeatable_pairs

logger = logging.getLogger(__name__)

PAIR_COLUMNS = ['pair', 'rr', 'ms', 'mma', 'n_kpts_a', 'n_kpts_b', 'n_matches',
                'n_correct', 'mma_undefined', 'no_shared_view']
AGGREGATE_KEYS = ['rr', 'ms', 'mma', 'n_kpts_a', 'n_kpts_b', 'n_matches', 'n_correct']


@dataclass
class EvalConfig:
    """Benchmark settings."""
    num_kpts: int = 1024
    tol: float = 3.0
    ratio: float = 0.8
    mutual: bool = False
    mma_definition: str = 'standard'
    verify_fraction: float = 0.05
    max_viz: int = 20

    def __post_init__(self):
        if self.mma_definition not in MMA_DEFINITIONS:
            raise ValueError(f"eval.mma_definition must be one of {MMA_DEFINITIONS}")
        if self.num_kpts < 1 or self.tol < 0:
            raise ValueError("eval.num_kpts must be >= 1 and eval.tol >= 0")
        if not 0 <= self.verify_fraction <= 1:
            raise ValueError("eval.verify_fraction must be in [0, 1]")


@dataclass
class PairResult:
    """Metrics and the intermediate data needed to visualise or recount them."""
    pair: str
    rr: float
    ms: float
    mma: float
    n_kpts_a: int
    n_kpts_b: int
    n_matches: int
    n_correct: int
    mma_undefined: bool = False
    no_shared_view: bool = False
    kps_a: List[Keypoint] = field(default_factory=list, repr=False)
    kps_b: List[Keypoint] = field(default_factory=list, repr=False)
    desc_kps_a: List[Keypoint] = field(default_factory=list, repr=False)
    desc_kps_b: List[Keypoint] = field(default_factory=list, repr=False)
    matches: Optional[MatchSet] = field(default=None, repr=False)

    def row(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in PAIR_COLUMNS}


@dataclass
class EvalReport:
    """Per-pair table and aggregate means."""
    pairs: pd.DataFrame
    aggregate: Dict[str, float]
    config: Dict[str, Any] = field(default_factory=dict)
    verified: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'aggregate': self.aggregate,
            'n_pairs': int(len(self.pairs)),
            'config': self.config,
            'verified_pairs': self.verified,
        }

    def save(self, out_dir: Union[str, Path]) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.pairs.to_csv(out / 'pairs.csv', index=False, float_format='%.6f',
                          lineterminator='\n')
        with open(out / 'report.json', 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def evaluate_pair(pair: EvalPair, detector, plugin: FeaturePlugin,
                  cfg: Optional[EvalConfig] = None) -> PairResult:
    """
    RR over the detected keypoints; MS and MMA over the described ones.
    Pairs without a shared view score 0 and are flagged.
    """
    cfg = cfg or EvalConfig()
    kps_a = detector.detect(pair.image_a, cfg.num_kpts)[:cfg.num_kpts]
    kps_b = detector.detect(pair.image_b, cfg.num_kpts)[:cfg.num_kpts]
    da = plugin.describe(pair.image_a, kps_a)
    db = plugin.describe(pair.image_b, kps_b)
    matches = match_ratio(da, db, cfg.ratio, cfg.mutual)

    result = PairResult(pair.pair_id, 0.0, 0.0, 0.0, len(kps_a), len(kps_b), len(matches), 0,
                        kps_a=list(kps_a), kps_b=list(kps_b),
                        desc_kps_a=list(da.keypoints), desc_kps_b=list(db.keypoints),
                        matches=matches)
    try:
        result.rr = repeatability(kps_a, kps_b, pair.gt, cfg.tol)
        m = matching_metrics(matches, da.keypoints, db.keypoints, pair.gt, cfg.tol,
                             cfg.mma_definition)
    except NoSharedView as e:
        logger.warning(f"Pair {pair.pair_id}: {e}")
        result.no_shared_view = True
        result.mma_undefined = True
        return result
    result.ms, result.mma = m.ms, m.mma
    result.n_correct, result.mma_undefined = m.n_correct, m.mma_undefined
    return result


# =============================================================================
# Recount oracle
# =============================================================================

def _recount(result: PairResult, gt: GroundTruth, cfg: EvalConfig) -> Dict[str, float]:
    """Loop-based recount of RR, MS and MMA from the stored keypoints and matches."""
    def shared(points, fwd, shape, valid):
        out = []
        h, w = shape
        for p in points:
            q = fwd(np.array([[p.x, p.y]]))[0]
            ok = bool(np.all(np.isfinite(q))) and 0 <= q[0] <= w - 1 and 0 <= q[1] <= h - 1
            if ok and valid is not None:
                ok = bool(valid[int(round(q[1])), int(round(q[0]))])
            out.append(ok)
        return out

    in_a = shared(result.kps_a, gt.forward, gt.shape_b, gt.valid_b)
    in_b = shared(result.kps_b, gt.backward, gt.shape_a, gt.valid_a)
    order = sorted([i for i in range(len(in_a)) if in_a[i]], key=lambda i: -result.kps_a[i].score)
    free = [j for j in range(len(in_b)) if in_b[j]]
    pairs = 0
    for i in order:
        q = gt.forward(np.array([[result.kps_a[i].x, result.kps_a[i].y]]))[0]
        best, best_d = None, np.inf
        for j in free:
            d = float(np.hypot(q[0] - result.kps_b[j].x, q[1] - result.kps_b[j].y))
            if d < best_d:
                best, best_d = j, d
        if best is not None and best_d <= cfg.tol:
            free.remove(best)
            pairs += 1
    rr = pairs / min(sum(in_a), sum(in_b))

    da_in = shared(result.desc_kps_a, gt.forward, gt.shape_b, gt.valid_b)
    db_in = shared(result.desc_kps_b, gt.backward, gt.shape_a, gt.valid_a)
    correct = 0
    for ia, ib in zip(result.matches.index_a, result.matches.index_b):
        a, b = result.desc_kps_a[ia], result.desc_kps_b[ib]
        q = gt.forward(np.array([[a.x, a.y]]))[0]
        if np.all(np.isfinite(q)) and np.hypot(q[0] - b.x, q[1] - b.y) <= cfg.tol:
            correct += 1
    ms = min(1.0, correct / min(sum(da_in), sum(db_in)))
    if cfg.mma_definition == 'standard':
        possible = len(result.matches)
    else:
        possible = repeatable_pairs(result.desc_kps_a, result.desc_kps_b, gt, cfg.tol)
    mma = 0.0 if possible == 0 else min(1.0, correct / possible)
    return {'rr': rr, 'ms': ms, 'mma': mma}


def verify_results(results: Sequence[PairResult], pairs: Dict[str, EvalPair], cfg: EvalConfig,
                   rng: np.random.Generator, tol: float = 1e-9) -> List[str]:
    """
    Recount a random sample of pairs and compare.

    Raises:
        MetricsMismatch: when a recount disagrees with the fast path
    """
    candidates = [r for r in results if not r.no_shared_view]
    if not candidates or cfg.verify_fraction <= 0:
        return []
    n = max(1, int(round(cfg.verify_fraction * len(candidates))))
    picked = sorted(rng.choice(len(candidates), size=min(n, len(candidates)), replace=False))
    checked = []
    for idx in picked:
        r = candidates[idx]
        expected = _recount(r, pairs[r.pair].gt, cfg)
        for key, value in expected.items():
            if abs(getattr(r, key) - value) > tol:
                raise MetricsMismatch(
                    f"Pair {r.pair}: {key} = {getattr(r, key):.9f}, recount gives {value:.9f}"
                )
        checked.append(r.pair)
    return checked


# =============================================================================
# Runner
# =============================================================================

def _aggregate(frame: pd.DataFrame) -> Dict[str, float]:
    if len(frame) == 0:
        return {k: 0.0 for k in AGGREGATE_KEYS}
    return {k: float(frame[k].mean()) for k in AGGREGATE_KEYS}


def _pair_job(args) -> PairResult:
    directory, detector, plugin, cfg = args
    return evaluate_pair(load_eval_pair(directory), detector, plugin, cfg)


def run_benchmark(dataset_dir: Union[str, Path], detector, plugin: FeaturePlugin,
                  cfg: Optional[EvalConfig] = None, out_dir: Optional[Union[str, Path]] = None,
                  jobs: int = 1, seed: int = 0, style: Optional[PlotStyle] = None) -> EvalReport:
    """
    Evaluate a detector/descriptor combination on every pair of a dataset.

    Args:
        dataset_dir: directory of pair subdirectories
        detector: anything with detect(image, k) -> keypoints
        plugin: descriptor plugin
        cfg: benchmark settings
        out_dir: where reports, visualisations and plots go (skipped when None)
        jobs: parallel pair workers
        seed: selects the pairs re-verified by the recount oracle

    Raises:
        DatasetFormatError: a pair is missing files or malformed
        MetricsMismatch: the recount oracle disagrees
    """
    cfg = cfg or EvalConfig()
    directories = list_pairs(dataset_dir)
    pairs = {d.name: load_eval_pair(d) for d in directories}

    tasks = [(d, detector, plugin, cfg) for d in directories]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(tqdm(pool.map(_pair_job, tasks), total=len(tasks), desc="Evaluate"))
    else:
        results = [evaluate_pair(pairs[d.name], detector, plugin, cfg)
                   for d in tqdm(directories, desc="Evaluate")]

    verified = verify_results(results, pairs, cfg, np.random.default_rng(seed))
    frame = pd.DataFrame([r.row() for r in results], columns=PAIR_COLUMNS)
    report = EvalReport(frame, _aggregate(frame), asdict(cfg), verified)

    if out_dir:
        out = Path(out_dir)
        report.save(out)
        _write_visuals(out, results, pairs, frame, cfg, style)
    agg = report.aggregate
    logger.info(f"Mean RR {agg['rr']:.3f} | MS {agg['ms']:.3f} | "
                f"MMA@{cfg.tol:g} {agg['mma']:.3f} over {len(frame)} pair(s)")
    return report


def _write_visuals(out: Path, results: Sequence[PairResult], pairs: Dict[str, EvalPair],
                   frame: pd.DataFrame, cfg: EvalConfig, style: Optional[PlotStyle]) -> None:
    viz = MatchPlotter(style, out)
    for r in results[:cfg.max_viz]:
        pair = pairs[r.pair]
        correct = correct_mask(r.matches, r.desc_kps_a, r.desc_kps_b, pair.gt, cfg.tol)
        viz.plot_and_save(r.pair, subdirectory='viz', image_a=pair.image_a,
                          image_b=pair.image_b, kps_a=r.desc_kps_a, kps_b=r.desc_kps_b,
                          matches=r.matches, correct=correct, title=r.pair)
    if len(frame):
        MetricsPlotter(style, out / 'plots').save_all(frame)
