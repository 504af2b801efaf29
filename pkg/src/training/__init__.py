"""Losses, sampling and the optimisation loop."""

from .losses import (
    LossConfig,
    LOSS_COMBINATIONS,
    loss_cossim,
    loss_simple,
    loss_peak,
    loss_terms,
    total_loss,
    cross_view_consistency,
)
from .sampling import sample_negative_mask
from .dataset import HeatmapDataset, TripletSample, ViewSample
from .trainer import TrainConfig, Trainer, TrainResult, train, METRIC_COLUMNS
