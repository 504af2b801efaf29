"""
Siamese training loop.

Each step passes the warped views B and B' of every triplet in the batch
through the shared network, computes the per-view losses against their
own heatmaps and sums them. With siamese off only view B is used.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import torch
from torch.utils.data import DataLoader
from tqdm import tqdm

from ..errors import EmptyDataset, NrkdError, TrainingDiverged
from ..model import DetectorNet, save_weights
from .dataset import HeatmapDataset, TripletSample, collate_samples
from .losses import LossConfig, cross_view_consistency, loss_terms
from .sampling import sample_negative_mask

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['step', 'loss', 'loss_cossim', 'loss_simple', 'loss_peak', 'lr']


@dataclass
class TrainConfig:
    """Optimisation settings."""
    lr: float = 0.006
    lr_decay: float = 0.9
    lr_step: int = 500
    epochs: int = 7
    max_steps: Optional[int] = None
    batch_size: int = 12
    min_peaks: int = 32
    siamese: bool = True
    deterministic: bool = False
    seed: int = 0
    device: str = 'cpu'
    workers: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.lr <= 0 or not 0 < self.lr_decay <= 1 or self.lr_step < 1:
            raise ValueError("train.lr must be > 0, train.lr_decay in (0, 1], train.lr_step >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("train.batch_size and train.epochs must be >= 1")


@dataclass
class TrainResult:
    model: DetectorNet
    metrics: pd.DataFrame
    images_per_step: List[int] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)


def _view_tensors(sample: TripletSample, which: str):
    view = sample.view_b if which == 'b' else sample.view_bp
    return view.image, view.heatmap, view.valid


class Trainer:
    """Owns the model, optimiser and schedule for one training run."""

    def __init__(self, model: DetectorNet, train_cfg: Optional[TrainConfig] = None,
                 loss_cfg: Optional[LossConfig] = None):
        self.cfg = train_cfg or TrainConfig()
        self.loss_cfg = loss_cfg or LossConfig()
        self.device = torch.device(self.cfg.device)
        self.model = model.to(self.device)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=self.cfg.lr)
        # stepped once per optimisation step
        self.scheduler = torch.optim.lr_scheduler.StepLR(
            self.optimizer, step_size=self.cfg.lr_step, gamma=self.cfg.lr_decay
        )
        self.rng = np.random.default_rng(self.cfg.seed)
        self.step = 0

    def _batch_loss(self, batch: List[TripletSample]):
        views = ['b', 'bp'] if self.cfg.siamese else ['b']
        images = np.stack([_view_tensors(s, v)[0] for s in batch for v in views])
        x = torch.from_numpy(images).unsqueeze(1).to(self.device)
        scores = self.model(x)[:, 0]

        totals = []
        logged: Dict[str, List[float]] = {'loss_cossim': [], 'loss_simple': [], 'loss_peak': []}
        for i, sample in enumerate(batch):
            per_view = []
            for j, v in enumerate(views):
                _, heatmap, valid = _view_tensors(sample, v)
                S = scores[i * len(views) + j]
                try:
                    mask = sample_negative_mask(heatmap, self.rng, valid)
                    M = torch.from_numpy(heatmap.values).to(S)
                    F = torch.from_numpy(mask).to(S)
                    parts = loss_terms(S, M, F, self.loss_cfg)
                except NrkdError as e:
                    logger.debug(f"Skipping view {v} of {sample.pair_id}: {e}")
                    continue
                per_view.append(parts['loss'])
                for key in logged:
                    if key in parts:
                        logged[key].append(float(parts[key].detach()))
            if not per_view:
                continue
            total = torch.stack(per_view).sum()
            if self.cfg.siamese and self.loss_cfg.consistency_weight > 0 and len(per_view) == 2:
                links = torch.from_numpy(sample.links).to(self.device)
                total = total + self.loss_cfg.consistency_weight * cross_view_consistency(
                    scores[i * 2], scores[i * 2 + 1], links)
            totals.append(total)

        if not totals:
            return None, {}, len(images)
        loss = torch.stack(totals).mean()
        summary = {k: (float(np.mean(v)) if v else math.nan) for k, v in logged.items()}
        return loss, summary, len(images)

    def train_step(self, batch: List[TripletSample]) -> Optional[Dict[str, float]]:
        self.model.train()
        self.optimizer.zero_grad()
        loss, parts, n_images = self._batch_loss(batch)
        if loss is None:
            logger.warning(f"Step {self.step}: no usable view in batch, skipped")
            return None
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"Non-finite loss at step {self.step}")
        lr = self.optimizer.param_groups[0]['lr']
        loss.backward()
        self.optimizer.step()
        self.scheduler.step()
        self.step += 1
        return {'step': self.step, 'loss': float(loss.detach()), **parts, 'lr': lr,
                'images': n_images}

    def checkpoint(self, out_dir: Path, name: str) -> Path:
        path = out_dir / name
        save_weights(self.model, path, extra={'step': self.step})
        return path


def _loader(dataset: HeatmapDataset, cfg: TrainConfig) -> DataLoader:
    generator = torch.Generator()
    generator.manual_seed(cfg.seed)
    return DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True,
                      num_workers=cfg.workers, collate_fn=collate_samples,
                      generator=generator)


def train(dataset: HeatmapDataset, model: DetectorNet,
          train_cfg: Optional[TrainConfig] = None, loss_cfg: Optional[LossConfig] = None,
          out_dir: Optional[Union[str, Path]] = None) -> TrainResult:
    """
    Optimise the model on the dataset.

    Writes metrics.csv, periodic checkpoints and final weights to out_dir
    when given.

    Raises:
        EmptyDataset: dataset has no samples
        TrainingDiverged: loss became non-finite
    """
    cfg = train_cfg or TrainConfig()
    if len(dataset) == 0:
        raise EmptyDataset("Training dataset is empty")
    if cfg.siamese != dataset.siamese:
        logger.warning("Dataset peak filter and train.siamese disagree")

    torch.manual_seed(cfg.seed)
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)

    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)

    trainer = Trainer(model, cfg, loss_cfg)
    loader = _loader(dataset, cfg)
    total_steps = cfg.epochs * len(loader)
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps)

    rows = []
    images_per_step = []
    checkpoints = []
    progress = tqdm(total=total_steps, desc="Training")
    try:
        for epoch in range(cfg.epochs):
            for batch in loader:
                if trainer.step >= total_steps:
                    break
                row = trainer.train_step(batch)
                if row is None:
                    continue
                images_per_step.append(row.pop('images'))
                rows.append(row)
                progress.update(1)
                progress.set_postfix(loss=f"{row['loss']:.4f}", epoch=epoch)
                if out and cfg.checkpoint_every and trainer.step % cfg.checkpoint_every == 0:
                    checkpoints.append(trainer.checkpoint(out, f"checkpoint_{trainer.step:06d}.nrkw"))
            if trainer.step >= total_steps:
                break
    finally:
        progress.close()
        if cfg.deterministic:
            torch.use_deterministic_algorithms(False)

    metrics = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    if out:
        metrics.to_csv(out / 'metrics.csv', index=False, lineterminator='\n')
        checkpoints.append(trainer.checkpoint(out, 'weights.nrkw'))
    if len(metrics):
        logger.info(f"Trained {trainer.step} step(s); final loss {metrics['loss'].iloc[-1]:.4f}")
    trainer.model.eval()
    return TrainResult(trainer.model, metrics, images_per_step, checkpoints)
