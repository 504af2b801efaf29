"""Matching metrics, ground-truth correspondence and the benchmark runner."""

from .ground_truth import (
    GroundTruth,
    WarpGroundTruth,
    CorrespondenceGroundTruth,
    EvalPair,
    load_eval_pair,
    list_pairs,
    read_correspondences,
)
from .metrics import (
    SharedView,
    MatchingResult,
    shared_view,
    repeatable_pairs,
    repeatability,
    correct_mask,
    matching_metrics,
    MMA_DEFINITIONS,
)
from .benchmark import EvalConfig, EvalReport, PairResult, evaluate_pair, run_benchmark, verify_results
