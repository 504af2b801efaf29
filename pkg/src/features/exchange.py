"""
Plugin exchange format.

Keypoints: CSV with header `x,y,score`, 6-decimal fixed precision.
Descriptors: little-endian binary, 4-byte magic, u32 n, u32 d, then n*d
float32 row-major. Vocabularies reuse the layout with magic "NRKV".
"""

import struct
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
import pandas as pd

from ..errors import CorruptFile
from .types import Keypoint, array_to_keypoints, keypoints_to_array

DESCRIPTOR_MAGIC = b"NRKD"
VOCABULARY_MAGIC = b"NRKV"
_HEADER = struct.Struct('<4sII')


def write_keypoints_csv(path: Union[str, Path], keypoints: Sequence[Keypoint]) -> None:
    frame = pd.DataFrame(keypoints_to_array(keypoints), columns=['x', 'y', 'score'])
    frame.to_csv(path, index=False, float_format='%.6f', lineterminator='\n')


def read_keypoints_csv(path: Union[str, Path]) -> List[Keypoint]:
    """Raises CorruptFile on a missing header or non-numeric cells."""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise CorruptFile(f"Unreadable keypoint CSV {path}: {e}") from e
    if list(frame.columns) != ['x', 'y', 'score']:
        raise CorruptFile(f"Keypoint CSV {path} must have header x,y,score")
    try:
        values = frame.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise CorruptFile(f"Non-numeric keypoint entries in {path}") from e
    if not np.all(np.isfinite(values)):
        raise CorruptFile(f"Non-finite keypoint entries in {path}")
    return array_to_keypoints(values)


def write_matrix(path: Union[str, Path], matrix: np.ndarray,
                 magic: bytes = DESCRIPTOR_MAGIC) -> None:
    matrix = np.asarray(matrix, dtype='<f4')
    if matrix.ndim != 2:
        raise ValueError("Expected a 2D matrix")
    n, d = matrix.shape
    with open(path, 'wb') as f:
        f.write(_HEADER.pack(magic, n, d))
        f.write(np.ascontiguousarray(matrix).tobytes())


def read_matrix(path: Union[str, Path], magic: bytes = DESCRIPTOR_MAGIC) -> np.ndarray:
    """Raises CorruptFile on a wrong magic or size mismatch."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptFile(f"{path} is shorter than its header")
    tag, n, d = _HEADER.unpack_from(data)
    if tag != magic:
        raise CorruptFile(f"{path} has magic {tag!r}, expected {magic!r}")
    expected = _HEADER.size + 4 * n * d
    if len(data) != expected:
        raise CorruptFile(f"{path} holds {len(data)} bytes, expected {expected}")
    return np.frombuffer(data, dtype='<f4', offset=_HEADER.size).reshape(n, d).astype(np.float32)


def write_descriptors(path: Union[str, Path], vectors: np.ndarray) -> None:
    write_matrix(path, vectors, DESCRIPTOR_MAGIC)


def read_descriptors(path: Union[str, Path]) -> np.ndarray:
    return read_matrix(path, DESCRIPTOR_MAGIC)
