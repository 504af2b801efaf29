"""Matching-heatmap ground truth construction."""

from .builder import (
    HeatmapConfig,
    MatchingHeatmap,
    CorrectMatchSet,
    TripletGroundTruth,
    correct_matches,
    render_peaks,
    gaussian_kernel3,
    transport_peaks,
    average_peaks,
    build_triplet_heatmaps,
    build_triplet_ground_truth,
    build_dataset_heatmaps,
    save_heatmap,
    load_heatmap,
    load_heatmap_peaks,
    read_heatmap_index,
    HEATMAP_FILES,
    CROSS_VIEW_FILE,
)
