"""
Keypoint, descriptor and match containers.
"""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

UNIT_NORM_TOL = 1e-5


@dataclass(frozen=True)
class Keypoint:
    """Detected point at subpixel (x, y) with its detection score."""
    x: float
    y: float
    score: float = 0.0


def keypoints_to_array(keypoints: Sequence[Keypoint]) -> np.ndarray:
    """(n, 3) array of x, y, score."""
    if len(keypoints) == 0:
        return np.zeros((0, 3))
    return np.array([[k.x, k.y, k.score] for k in keypoints], dtype=np.float64)


def array_to_keypoints(array: np.ndarray) -> List[Keypoint]:
    array = np.asarray(array, dtype=np.float64).reshape(-1, 3)
    return [Keypoint(float(x), float(y), float(s)) for x, y, s in array]


def keypoint_xy(keypoints: Sequence[Keypoint]) -> np.ndarray:
    """(n, 2) array of x, y."""
    return keypoints_to_array(keypoints)[:, :2]


@dataclass
class DescriptorSet:
    """Keypoints and their L2-normalised feature vectors, row-aligned."""
    keypoints: List[Keypoint]
    vectors: np.ndarray
    dropped: List[int] = field(default_factory=list)  # input indices left undescribed

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            if self.vectors.size == 0:
                self.vectors = np.zeros((len(self.keypoints), 0), dtype=np.float32)
            else:
                self.vectors = self.vectors.reshape(len(self.keypoints), -1)
        if len(self.vectors) != len(self.keypoints):
            raise ValueError(
                f"{len(self.vectors)} descriptor rows for {len(self.keypoints)} keypoints"
            )
        if len(self.vectors):
            norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise ValueError("Descriptor rows must be unit-norm")

    def __len__(self) -> int:
        return len(self.keypoints)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def points(self) -> np.ndarray:
        return keypoint_xy(self.keypoints)

    @classmethod
    def empty(cls, dim: int = 0) -> 'DescriptorSet':
        return cls([], np.zeros((0, dim), dtype=np.float32))


@dataclass
class MatchSet:
    """Putative correspondences; index_a entries are unique."""
    index_a: np.ndarray
    index_b: np.ndarray
    distance: np.ndarray
    ratio: np.ndarray

    def __len__(self) -> int:
        return len(self.index_a)

    @property
    def pairs(self) -> List[Tuple[int, int, float, float]]:
        return [(int(a), int(b), float(d), float(r))
                for a, b, d, r in zip(self.index_a, self.index_b, self.distance, self.ratio)]

    @classmethod
    def empty(cls) -> 'MatchSet':
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros(0), np.zeros(0))
