"""
Bag-of-visual-words retrieval.

A k-means vocabulary over local descriptors; each image becomes an
L2-normalised histogram of hard word assignments (optionally idf
weighted); queries rank the gallery by exact Euclidean distance.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from tqdm import tqdm

from ..errors import DatasetFormatError, InsufficientDescriptors
from ..features import DescriptorSet, FeaturePlugin
from ..features.exchange import VOCABULARY_MAGIC, read_matrix, write_matrix
from ..utils.conversions import read_gray
from ..utils.hashing import config_hash

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.png', '.jpg', '.jpeg', '.bmp', '.tif', '.tiff')
LABEL_SEPARATOR = '__'


@dataclass
class RetrievalConfig:
    """Vocabulary and ranking settings."""
    vocab_size: int = 256
    max_iter: int = 50
    tol: float = 1e-4
    idf: bool = False
    num_kpts: int = 1024
    top_k: int = 5

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("retrieval.vocab_size must be >= 2")
        if self.top_k < 1 or self.num_kpts < 1:
            raise ValueError("retrieval.top_k and retrieval.num_kpts must be >= 1")


@dataclass
class Vocabulary:
    """V x d visual-word centers."""
    centers: np.ndarray
    inertia: float = 0.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float32)
        if self.centers.ndim != 2 or len(self.centers) < 2:
            raise ValueError("A vocabulary needs at least 2 centers")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("Vocabulary centers must be finite")

    @property
    def size(self) -> int:
        return len(self.centers)

    def assign(self, vectors: np.ndarray) -> np.ndarray:
        """Nearest center per row; ties go to the lower word index."""
        if len(vectors) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmin(cdist(np.asarray(vectors, dtype=np.float64), self.centers), axis=1)


@dataclass
class GlobalDescriptor:
    """L2-normalised word histogram; all-zero and flagged when the image had no features."""
    histogram: np.ndarray
    degenerate: bool = False


def _seed_from(rng: Union[int, np.random.Generator, None]) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**31 - 1))
    return int(rng or 0)


def build_vocabulary(descriptor_sets: Sequence[Union[DescriptorSet, np.ndarray]], V: int = 256,
                     rng: Union[int, np.random.Generator, None] = 0,
                     max_iter: int = 50, tol: float = 1e-4) -> Vocabulary:
    """
    k-means (k-means++ seeding, single run) over all descriptors.

    Raises:
        InsufficientDescriptors: fewer descriptors than words
    """
    if V < 2:
        raise ValueError(f"Vocabulary size must be >= 2, got {V}")
    blocks = [np.asarray(d.vectors if isinstance(d, DescriptorSet) else d, dtype=np.float64)
              for d in descriptor_sets]
    blocks = [b for b in blocks if len(b)]
    total = sum(len(b) for b in blocks)
    if total < V:
        raise InsufficientDescriptors(f"{total} descriptor(s) for a {V}-word vocabulary")
    data = np.vstack(blocks)

    kmeans = KMeans(n_clusters=V, init='k-means++', n_init=1, max_iter=max_iter, tol=tol,
                    random_state=_seed_from(rng))
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ConvergenceWarning)
        kmeans.fit(data)
    logger.info(f"Vocabulary: {V} words from {total} descriptors "
                f"({kmeans.n_iter_} iterations, inertia {kmeans.inertia_:.4g})")
    return Vocabulary(kmeans.cluster_centers_, float(kmeans.inertia_))


def word_histogram(ds: Union[DescriptorSet, np.ndarray], vocab: Vocabulary) -> np.ndarray:
    vectors = ds.vectors if isinstance(ds, DescriptorSet) else np.asarray(ds)
    return np.bincount(vocab.assign(vectors), minlength=vocab.size).astype(np.float64)


def _normalise(hist: np.ndarray) -> GlobalDescriptor:
    norm = np.linalg.norm(hist)
    if norm == 0:
        return GlobalDescriptor(np.zeros_like(hist), degenerate=True)
    return GlobalDescriptor(hist / norm)


def global_descriptor(ds: Union[DescriptorSet, np.ndarray], vocab: Vocabulary,
                      idf: Optional[np.ndarray] = None) -> GlobalDescriptor:
    """Hard-assignment tf histogram (times idf when given), L2-normalised."""
    hist = word_histogram(ds, vocab)
    if idf is not None:
        hist = hist * idf
    return _normalise(hist)


def inverse_document_frequency(histograms: Sequence[np.ndarray]) -> np.ndarray:
    """log(N / (1 + df)) + 1 per word."""
    counts = np.asarray(histograms)
    df = np.count_nonzero(counts > 0, axis=0)
    return np.log(len(counts) / (1.0 + df)) + 1.0


def _matrix(gallery) -> np.ndarray:
    if isinstance(gallery, np.ndarray):
        return gallery
    return np.stack([g.histogram if isinstance(g, GlobalDescriptor) else g for g in gallery])


def query(gallery: Union[Sequence[GlobalDescriptor], np.ndarray],
          q: Union[GlobalDescriptor, np.ndarray], K: int) -> np.ndarray:
    """Indices of the K nearest gallery entries by Euclidean distance, ties by index."""
    g = _matrix(gallery)
    qv = q.histogram if isinstance(q, GlobalDescriptor) else np.asarray(q)
    dist = np.linalg.norm(g - qv[None, :], axis=1)
    return np.argsort(dist, kind='stable')[:K]


def accuracy_at_k(rankings: Sequence[Sequence[int]], gallery_labels: Sequence[str],
                  query_labels: Sequence[str], K: int) -> float:
    """Fraction of queries whose own label appears among their top K gallery entries."""
    if len(rankings) == 0:
        return 0.0
    hits = 0
    for ranked, label in zip(rankings, query_labels):
        if any(gallery_labels[i] == label for i in list(ranked)[:K]):
            hits += 1
    return hits / len(rankings)


# =============================================================================
# Persistence
# =============================================================================

def save_vocabulary(vocab: Vocabulary, path: Union[str, Path]) -> None:
    write_matrix(path, vocab.centers, VOCABULARY_MAGIC)


def load_vocabulary(path: Union[str, Path]) -> Vocabulary:
    return Vocabulary(read_matrix(path, VOCABULARY_MAGIC))


@dataclass
class RetrievalIndex:
    """Gallery global descriptors with their labels and source images."""
    vocabulary: Vocabulary
    labels: List[str]
    paths: List[str]
    descriptors: np.ndarray
    degenerate: List[bool] = field(default_factory=list)
    idf: Optional[np.ndarray] = None

    @classmethod
    def build(cls, vocab: Vocabulary, sets: Sequence[DescriptorSet], labels: Sequence[str],
              paths: Sequence[str], use_idf: bool = False) -> 'RetrievalIndex':
        hists = [word_histogram(ds, vocab) for ds in sets]
        idf = inverse_document_frequency(hists) if use_idf and hists else None
        descs = [_normalise(h * idf if idf is not None else h) for h in hists]
        for label, d in zip(labels, descs):
            if d.degenerate:
                logger.warning(f"Gallery image '{label}' has no features; zero descriptor")
        return cls(vocab, list(labels), [str(p) for p in paths],
                   np.stack([d.histogram for d in descs]), [d.degenerate for d in descs], idf)

    def describe(self, ds: DescriptorSet) -> GlobalDescriptor:
        return global_descriptor(ds, self.vocabulary, self.idf)

    def query(self, ds: DescriptorSet, K: int) -> np.ndarray:
        return query(self.descriptors, self.describe(ds), K)

    def save(self, path: Union[str, Path]) -> None:
        doc = {
            'labels': self.labels,
            'paths': self.paths,
            'descriptors': self.descriptors.tolist(),
            'degenerate': self.degenerate,
            'idf': self.idf.tolist() if self.idf is not None else None,
            'vocabulary_size': self.vocabulary.size,
        }
        with open(path, 'w') as f:
            json.dump(doc, f)

    @classmethod
    def load(cls, path: Union[str, Path], vocab: Vocabulary) -> 'RetrievalIndex':
        try:
            with open(path, 'r') as f:
                doc = json.load(f)
            descriptors = np.array(doc['descriptors'], dtype=np.float64)
            idf = np.array(doc['idf']) if doc.get('idf') is not None else None
            labels, paths = doc['labels'], doc['paths']
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"Malformed gallery index: {e}", path) from e
        if descriptors.shape[1:] != (vocab.size,):
            raise DatasetFormatError("Gallery index does not match the vocabulary", path)
        return cls(vocab, labels, paths, descriptors, doc.get('degenerate', []), idf)


# =============================================================================
# Pipeline
# =============================================================================

def image_label(path: Path) -> str:
    """Object label: file stem up to an optional '__<n>' view suffix."""
    return path.stem.split(LABEL_SEPARATOR)[0]


def list_labelled_images(directory: Union[str, Path]) -> List[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetFormatError("Image directory not found", d)
    images = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise DatasetFormatError("No images found", d)
    return images


def describe_images(paths: Sequence[Path], detector, plugin: FeaturePlugin,
                    num_kpts: int, desc: str = "Describe") -> List[DescriptorSet]:
    sets = []
    for p in tqdm(paths, desc=desc):
        image = read_gray(p)
        sets.append(plugin.describe(image, detector.detect(image, num_kpts)[:num_kpts]))
    return sets


def run_retrieval(gallery_dir: Union[str, Path], query_dir: Union[str, Path], detector,
                  plugin: FeaturePlugin, cfg: Optional[RetrievalConfig] = None,
                  out_dir: Optional[Union[str, Path]] = None, seed: int = 0) -> Dict:
    """
    Build a vocabulary and index over the gallery, rank every query and
    score accuracy@1..K. Labels come from file names (see image_label).

    Returns:
        Summary with accuracy per K and the per-query rankings
    """
    cfg = cfg or RetrievalConfig()
    gallery_paths = list_labelled_images(gallery_dir)
    query_paths = list_labelled_images(query_dir)

    gallery_sets = describe_images(gallery_paths, detector, plugin, cfg.num_kpts, "Gallery")
    query_sets = describe_images(query_paths, detector, plugin, cfg.num_kpts, "Queries")

    vocab = build_vocabulary(gallery_sets, cfg.vocab_size, seed, cfg.max_iter, cfg.tol)
    gallery_labels = [image_label(p) for p in gallery_paths]
    index = RetrievalIndex.build(vocab, gallery_sets, gallery_labels, gallery_paths, cfg.idf)

    query_labels = [image_label(p) for p in query_paths]
    K = min(cfg.top_k, len(gallery_paths))
    rankings = [index.query(ds, len(gallery_paths)) for ds in query_sets]
    accuracy = {str(k): accuracy_at_k(rankings, gallery_labels, query_labels, k)
                for k in range(1, K + 1)}

    rows = []
    for path, label, ranked in zip(query_paths, query_labels, rankings):
        ranked_labels = [gallery_labels[i] for i in ranked]
        rank = ranked_labels.index(label) + 1 if label in ranked_labels else -1
        rows.append({'query': path.name, 'label': label, 'rank': rank,
                     'top_k': ' '.join(ranked_labels[:K])})
    frame = pd.DataFrame(rows, columns=['query', 'label', 'rank', 'top_k'])

    summary = {
        'accuracy': accuracy,
        'n_gallery': len(gallery_paths),
        'n_queries': len(query_paths),
        'vocab_size': vocab.size,
        'config_hash': config_hash(cfg),
    }
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_vocabulary(vocab, out / 'vocabulary.nrkv')
        index.save(out / 'gallery_index.json')
        frame.to_csv(out / 'queries.csv', index=False, lineterminator='\n')
        with open(out / 'retrieval.json', 'w') as f:
            json.dump(summary, f, indent=2, sort_keys=True)
    logger.info(f"accuracy@1 {accuracy.get('1', 0.0):.3f} | "
                f"accuracy@{K} {accuracy.get(str(K), 0.0):.3f} over {len(query_paths)} queries")
    summary['rankings'] = [r.tolist() for r in rankings]
    return summary
