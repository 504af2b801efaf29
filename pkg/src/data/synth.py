"""
Synthetic training data: triplets (A, B, B') with known warps g, g'.

B and B' are produced from the anchor A by two independent composite
warps followed by photometric augmentation. Datasets are written as

    <out>/manifest.json
    <out>/pairs/<id>/{A.png, B.png, Bp.png, g.json, gp.json, valid_B.png, valid_Bp.png}

Evaluation pairs (a, b, warp.json, valid_b.png) use the same generator.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import cv2
import numpy as np
from tqdm import tqdm

from ..errors import DatasetFormatError, NonInvertibleWarp
from ..geometry.warps import (
    CompositeWarp,
    WarpConfig,
    load_warp,
    sample_random_warp,
    save_warp,
    warp_image,
)
from ..utils.conversions import read_gray, read_mask, write_gray, write_mask
from ..utils.hashing import config_hash
from .. import __version__

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.png', '.jpg', '.jpeg', '.bmp', '.tif', '.tiff')
# Fresh rng streams tried per item once all warp retries are rejected
MAX_RESAMPLES = 10

T = TypeVar('T')


@dataclass
class PhotometricConfig:
    """Ranges for the random photometric transform; (lo, hi) each."""
    brightness: Tuple[float, float] = (-0.1, 0.1)
    contrast: Tuple[float, float] = (0.8, 1.2)
    gamma: Tuple[float, float] = (0.8, 1.25)
    noise_std: Tuple[float, float] = (0.0, 0.02)

    def __post_init__(self):
        for name in ('brightness', 'contrast', 'gamma', 'noise_std'):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValueError(f"photometric.{name} must be a finite (lo, hi) range")
        if self.contrast[0] < 0 or self.gamma[0] <= 0 or self.noise_std[0] < 0:
            raise ValueError("contrast/noise must be >= 0 and gamma > 0")


@dataclass
class SynthConfig:
    """Dataset generation settings. Default resolution is 400 x 300 (W x H)."""
    count: int = 50
    height: int = 300
    width: int = 400
    max_retries: int = 5

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


@dataclass
class TrainingTriplet:
    """Anchor and its two warped, augmented views."""
    anchor: np.ndarray
    warped_1: np.ndarray
    warped_2: np.ndarray
    warp_1: CompositeWarp
    warp_2: CompositeWarp
    validity_1: np.ndarray
    validity_2: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.anchor.shape[:2]


# =============================================================================
# Image synthesis
# =============================================================================

def photometric_augment(image: np.ndarray, cfg: PhotometricConfig,
                        rng: np.random.Generator) -> np.ndarray:
    """
    Brightness offset, contrast scale, gamma, then additive Gaussian noise,
    each drawn from the cfg ranges. Output clamped to [0, 1].
    """
    brightness = rng.uniform(*cfg.brightness)
    contrast = rng.uniform(*cfg.contrast)
    gamma = rng.uniform(*cfg.gamma)
    noise_std = rng.uniform(*cfg.noise_std)
    noise = rng.standard_normal(image.shape)

    out = image.astype(np.float64) + brightness
    mean = out.mean()
    out = out * contrast + mean * (1.0 - contrast)
    out = np.clip(out, 0.0, 1.0) ** gamma
    out = out + noise_std * noise
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def synthetic_anchor(shape: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """
    Procedural textured image: smooth shading, filled polygons and ellipses,
    and fine-grained texture. Deterministic under rng.
    """
    h, w = shape
    shading = cv2.GaussianBlur(rng.random((h, w)).astype(np.float32), (0, 0), 25)
    shading = (shading - shading.min()) / (np.ptp(shading) + 1e-8)
    img = 0.3 + 0.4 * shading

    n_shapes = int(rng.integers(15, 30)) * max(1, (h * w) // (300 * 400))
    for _ in range(n_shapes):
        value = float(rng.uniform(0.0, 1.0))
        kind = rng.integers(0, 3)
        cx, cy = int(rng.integers(0, w)), int(rng.integers(0, h))
        size = int(rng.integers(max(4, min(h, w) // 20), max(8, min(h, w) // 5)))
        if kind == 0:
            x2 = min(w - 1, cx + size)
            y2 = min(h - 1, cy + int(size * rng.uniform(0.5, 1.5)))
            cv2.rectangle(img, (cx, cy), (x2, y2), value, thickness=-1)
        elif kind == 1:
            axes = (size // 2 + 1, int(size * rng.uniform(0.3, 0.8)) + 1)
            angle = float(rng.uniform(0, 180))
            cv2.ellipse(img, (cx, cy), axes, angle, 0, 360, value, thickness=-1)
        else:
            pts = np.stack([cx + rng.integers(-size, size + 1, 3),
                            cy + rng.integers(-size, size + 1, 3)], axis=1)
            cv2.fillPoly(img, [pts.astype(np.int32)], value)

    texture = cv2.GaussianBlur(rng.standard_normal((h, w)).astype(np.float32), (0, 0), 1.2)
    img = img + 0.08 * texture / (texture.std() + 1e-8)
    img = cv2.GaussianBlur(img.astype(np.float32), (0, 0), 0.7)
    img = (img - img.min()) / (np.ptp(img) + 1e-8)
    return (0.05 + 0.9 * img).astype(np.float32)


def load_anchor(path: Union[str, Path], shape: Tuple[int, int]) -> np.ndarray:
    """Read an image as grayscale and resize it to shape (H, W)."""
    img = read_gray(path)
    if img.shape != tuple(shape):
        img = cv2.resize(img, (shape[1], shape[0]), interpolation=cv2.INTER_AREA)
    return img.astype(np.float32)


def _warp_with_retries(anchor: np.ndarray, warp_cfg: WarpConfig, rng: np.random.Generator,
                       max_retries: int) -> Tuple[CompositeWarp, np.ndarray, np.ndarray]:
    shape = anchor.shape[:2]
    for attempt in range(max_retries + 1):
        warp = sample_random_warp(warp_cfg, rng, shape)
        try:
            warped, valid = warp_image(anchor, warp, shape, warp_cfg)
            return warp, warped, valid
        except NonInvertibleWarp as e:
            if attempt == max_retries:
                raise
            logger.warning(f"Resampling warp (attempt {attempt + 1}): {e}")
    raise AssertionError("unreachable")


def generate_triplet(anchor: np.ndarray, warp_cfg: WarpConfig,
                     photo_cfg: PhotometricConfig, rng: np.random.Generator,
                     max_retries: int = 5) -> TrainingTriplet:
    """
    Sample independent g, g'; warp the anchor geometrically, then augment
    the two views photometrically.

    Raises:
        NonInvertibleWarp: when every retry produced a degenerate warp
    """
    if anchor.ndim != 2:
        raise ValueError(f"Anchor must be a 2D grayscale raster, got shape {anchor.shape}")
    g, b, valid_b = _warp_with_retries(anchor, warp_cfg, rng, max_retries)
    gp, bp, valid_bp = _warp_with_retries(anchor, warp_cfg, rng, max_retries)
    b = photometric_augment(b, photo_cfg, rng) * valid_b
    bp = photometric_augment(bp, photo_cfg, rng) * valid_bp
    return TrainingTriplet(
        anchor=anchor.astype(np.float32),
        warped_1=b.astype(np.float32),
        warped_2=bp.astype(np.float32),
        warp_1=g,
        warp_2=gp,
        validity_1=valid_b,
        validity_2=valid_bp,
    )


# =============================================================================
# Dataset I/O
# =============================================================================

def write_triplet(directory: Union[str, Path], triplet: TrainingTriplet) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_gray(d / 'A.png', triplet.anchor)
    write_gray(d / 'B.png', triplet.warped_1)
    write_gray(d / 'Bp.png', triplet.warped_2)
    save_warp(triplet.warp_1, d / 'g.json')
    save_warp(triplet.warp_2, d / 'gp.json')
    write_mask(d / 'valid_B.png', triplet.validity_1)
    write_mask(d / 'valid_Bp.png', triplet.validity_2)


def load_triplet(directory: Union[str, Path]) -> TrainingTriplet:
    """Load a triplet written by write_triplet."""
    d = Path(directory)
    required = ['A.png', 'B.png', 'Bp.png', 'g.json', 'gp.json', 'valid_B.png', 'valid_Bp.png']
    for name in required:
        if not (d / name).exists():
            raise DatasetFormatError(f"Missing triplet file {name}", d / name)
    try:
        return TrainingTriplet(
            anchor=read_gray(d / 'A.png'),
            warped_1=read_gray(d / 'B.png'),
            warped_2=read_gray(d / 'Bp.png'),
            warp_1=load_warp(d / 'g.json'),
            warp_2=load_warp(d / 'gp.json'),
            validity_1=read_mask(d / 'valid_B.png'),
            validity_2=read_mask(d / 'valid_Bp.png'),
        )
    except (ValueError, json.JSONDecodeError) as e:
        raise DatasetFormatError(f"Malformed triplet: {e}", d) from e


def list_images(directory: Union[str, Path]) -> List[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetFormatError("Image directory not found", d)
    return sorted(p for p in d.rglob('*') if p.suffix.lower() in IMAGE_SUFFIXES)


def _resampled(make: Callable[[np.random.Generator], T], seed: int, label: str) -> T:
    """
    Run make(rng) on the item's stream, moving to a fresh stream derived from
    the same seed whenever every warp retry was rejected.
    """
    for attempt in range(MAX_RESAMPLES + 1):
        rng = np.random.default_rng(seed if attempt == 0 else [seed, attempt])
        try:
            return make(rng)
        except NonInvertibleWarp as e:
            if attempt == MAX_RESAMPLES:
                raise
            logger.warning(f"{label}: {e}; resampling (stream {attempt + 1})")
    raise AssertionError("unreachable")


def _triplet_job(args) -> Tuple[str, TrainingTriplet]:
    pair_id, seed, anchor_path, warp_cfg, photo_cfg, synth_cfg = args

    def make(rng):
        if anchor_path is None:
            anchor = synthetic_anchor(synth_cfg.shape, rng)
        else:
            anchor = load_anchor(anchor_path, synth_cfg.shape)
        return generate_triplet(anchor, warp_cfg, photo_cfg, rng, synth_cfg.max_retries)

    return pair_id, _resampled(make, seed, f"Triplet {pair_id}")


def derive_seeds(seed: int, count: int) -> List[int]:
    """Independent per-item seeds from a master seed."""
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, size=count)]


def write_triplet_dataset(out_dir: Union[str, Path], warp_cfg: WarpConfig,
                          photo_cfg: PhotometricConfig, synth_cfg: SynthConfig,
                          seed: int = 0, images: Optional[Sequence[Path]] = None,
                          jobs: int = 1) -> Dict:
    """
    Generate synth_cfg.count triplets into out_dir.

    Anchors come from `images` (cycled) when given, otherwise they are
    synthesised. Workers own their rng streams; only this process writes.

    Returns:
        The manifest dictionary (also written to manifest.json)
    """
    out = Path(out_dir)
    (out / 'pairs').mkdir(parents=True, exist_ok=True)
    n = synth_cfg.count
    seeds = derive_seeds(seed, n)
    ids = [f"{i:06d}" for i in range(n)]
    anchors = [images[i % len(images)] if images else None for i in range(n)]
    tasks = [(ids[i], seeds[i], anchors[i], warp_cfg, photo_cfg, synth_cfg) for i in range(n)]

    if jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = pool.map(_triplet_job, tasks)
            for pair_id, triplet in tqdm(results, total=n, desc="Synth"):
                write_triplet(out / 'pairs' / pair_id, triplet)
    else:
        for task in tqdm(tasks, desc="Synth"):
            pair_id, triplet = _triplet_job(task)
            write_triplet(out / 'pairs' / pair_id, triplet)

    manifest = {
        'version': __version__,
        'count': n,
        'shape': list(synth_cfg.shape),
        'seed': seed,
        'ids': ids,
        'seeds': seeds,
        'anchors': [str(a) if a is not None else None for a in anchors],
        'config_hash': config_hash([warp_cfg, photo_cfg, synth_cfg]),
    }
    with open(out / 'manifest.json', 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Wrote {n} triplet(s) to {out}")
    return manifest


def read_manifest(dataset_dir: Union[str, Path]) -> Dict:
    path = Path(dataset_dir) / 'manifest.json'
    if not path.exists():
        raise DatasetFormatError("Dataset manifest not found", path)
    try:
        with open(path, 'r') as f:
            manifest = json.load(f)
        manifest['ids']
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DatasetFormatError(f"Malformed manifest: {e}", path) from e
    return manifest


def _warped_view(shape: Tuple[int, int], warp_cfg: WarpConfig, photo_cfg: PhotometricConfig,
                 max_retries: int) -> Callable[[np.random.Generator], Tuple]:
    def make(rng):
        anchor = synthetic_anchor(shape, rng)
        warp, warped, valid = _warp_with_retries(anchor, warp_cfg, rng, max_retries)
        warped = photometric_augment(warped, photo_cfg, rng) * valid
        return anchor, warp, warped, valid
    return make


def write_eval_dataset(out_dir: Union[str, Path], count: int, warp_cfg: WarpConfig,
                       photo_cfg: PhotometricConfig, shape: Tuple[int, int],
                       seed: int = 0, max_retries: int = 5) -> List[Path]:
    """
    Write `count` evaluation pairs as <out>/<id>/{a.png, b.png, warp.json, valid_b.png},
    where warp.json maps a-coordinates into b.
    """
    out = Path(out_dir)
    make = _warped_view(shape, warp_cfg, photo_cfg, max_retries)
    dirs = []
    for i, item_seed in enumerate(derive_seeds(seed, count)):
        d = out / f"{i:06d}"
        anchor, warp, warped, valid = _resampled(make, item_seed, f"Pair {d.name}")
        d.mkdir(parents=True, exist_ok=True)
        write_gray(d / 'a.png', anchor)
        write_gray(d / 'b.png', warped)
        save_warp(warp, d / 'warp.json')
        write_mask(d / 'valid_b.png', valid)
        dirs.append(d)
    return dirs


def write_retrieval_dataset(out_dir: Union[str, Path], count: int, warp_cfg: WarpConfig,
                            photo_cfg: PhotometricConfig, shape: Tuple[int, int],
                            seed: int = 0, max_retries: int = 5) -> Tuple[Path, Path]:
    """
    One synthetic object per label: <out>/gallery/<label>.png holds the
    anchor and <out>/query/<label>.png a deformed, augmented view of it.

    Returns:
        (gallery dir, query dir)
    """
    out = Path(out_dir)
    gallery, queries = out / 'gallery', out / 'query'
    gallery.mkdir(parents=True, exist_ok=True)
    queries.mkdir(parents=True, exist_ok=True)
    make = _warped_view(shape, warp_cfg, photo_cfg, max_retries)
    for i, item_seed in enumerate(derive_seeds(seed, count)):
        name = f"obj{i:04d}.png"
        anchor, _, warped, _ = _resampled(make, item_seed, f"Object {name}")
        write_gray(gallery / name, anchor)
        write_gray(queries / name, warped)
    return gallery, queries
