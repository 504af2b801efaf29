"""Shared fixtures: synthetic textures, identity triplets and small datasets."""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.data import TrainingTriplet, synthetic_anchor, write_triplet
from src.geometry import CompositeWarp, save_warp
from src.utils.conversions import write_gray


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def texture():
    """96 x 96 procedural texture in [0, 1]."""
    return synthetic_anchor((96, 96), np.random.default_rng(7))


def identity_triplet(anchor: np.ndarray) -> TrainingTriplet:
    h, w = anchor.shape
    warp = CompositeWarp.identity(w - 1, h - 1)
    valid = np.ones((h, w), dtype=bool)
    return TrainingTriplet(anchor, anchor.copy(), anchor.copy(), warp, warp, valid, valid.copy())


def write_identity_dataset(root: Path, count: int = 4, shape=(64, 64), seed: int = 0) -> Path:
    """Triplets whose views equal the anchor, with a manifest listing them."""
    ids = [f"{i:06d}" for i in range(count)]
    for i, pair_id in enumerate(ids):
        anchor = synthetic_anchor(shape, np.random.default_rng(seed + i))
        write_triplet(root / 'pairs' / pair_id, identity_triplet(anchor))
    with open(root / 'manifest.json', 'w') as f:
        json.dump({'count': count, 'ids': ids, 'shape': list(shape)}, f)
    return root


def write_identity_pairs(root: Path, count: int = 3, shape=(96, 96), seed: int = 0) -> Path:
    """Evaluation pairs with b == a and an identity warp."""
    for i in range(count):
        image = synthetic_anchor(shape, np.random.default_rng(seed + i))
        d = root / f"{i:06d}"
        d.mkdir(parents=True)
        write_gray(d / 'a.png', image)
        write_gray(d / 'b.png', image)
        save_warp(CompositeWarp.identity(shape[1] - 1, shape[0] - 1), d / 'warp.json')
    return root


@pytest.fixture
def identity_dataset(tmp_path):
    return write_identity_dataset(tmp_path / 'train')


@pytest.fixture
def identity_pairs(tmp_path):
    return write_identity_pairs(tmp_path / 'eval')
