"""
Training samples read from a ground-truth dataset directory.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from torch.utils.data import Dataset

from ..errors import DatasetFormatError, EmptyDataset
from ..heatmaps import CROSS_VIEW_FILE, HEATMAP_FILES, MatchingHeatmap, load_heatmap, read_heatmap_index
from ..utils.conversions import read_gray, read_mask

logger = logging.getLogger(__name__)


@dataclass
class ViewSample:
    """One warped view with its heatmap and validity mask."""
    image: np.ndarray
    heatmap: MatchingHeatmap
    valid: np.ndarray


@dataclass
class TripletSample:
    pair_id: str
    view_b: ViewSample
    view_bp: ViewSample
    links: np.ndarray   # (m, 4) xb, yb, xbp, ybp


class HeatmapDataset(Dataset):
    """
    Triplets with built heatmaps. Triplets whose heatmaps carry fewer than
    min_peaks peaks are discarded (only view B is checked when siamese is off).
    """

    def __init__(self, dataset_dir: Union[str, Path], min_peaks: int = 32,
                 siamese: bool = True, sigma: float = 1.5):
        self.root = Path(dataset_dir)
        self.sigma = sigma
        self.siamese = siamese
        index = read_heatmap_index(self.root)
        counts = index.get('peaks', {})

        self.ids: List[str] = []
        for pair_id in index.get('built', []):
            n_b, n_bp = counts.get(pair_id, [0, 0])
            if n_b < min_peaks or (siamese and n_bp < min_peaks):
                logger.debug(f"Discarding {pair_id}: {n_b}/{n_bp} peaks < {min_peaks}")
                continue
            self.ids.append(pair_id)

        if not self.ids:
            raise EmptyDataset(
                f"No triplet in {self.root} has at least {min_peaks} heatmap peaks"
            )
        logger.info(f"Training set: {len(self.ids)} triplet(s) "
                    f"({len(index.get('built', [])) - len(self.ids)} discarded)")

    def __len__(self) -> int:
        return len(self.ids)

    def _view(self, d: Path, image: str, heatmap: str, mask: str) -> ViewSample:
        return ViewSample(
            image=read_gray(d / image),
            heatmap=load_heatmap(d / heatmap, self.sigma),
            valid=read_mask(d / mask),
        )

    def __getitem__(self, i: int) -> TripletSample:
        pair_id = self.ids[i]
        d = self.root / 'pairs' / pair_id
        links_path = d / CROSS_VIEW_FILE
        try:
            with open(links_path, 'r') as f:
                links = np.array(json.load(f)['links'], dtype=np.int64).reshape(-1, 4)
        except FileNotFoundError:
            links = np.zeros((0, 4), dtype=np.int64)
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise DatasetFormatError(f"Malformed cross-view links: {e}", links_path) from e
        return TripletSample(
            pair_id=pair_id,
            view_b=self._view(d, 'B.png', HEATMAP_FILES[0], 'valid_B.png'),
            view_bp=self._view(d, 'Bp.png', HEATMAP_FILES[1], 'valid_Bp.png'),
            links=links,
        )


def collate_samples(batch: List[TripletSample]) -> List[TripletSample]:
    return list(batch)
