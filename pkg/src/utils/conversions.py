"""
Intensity conversions and raster I/O.
"""

from pathlib import Path
from typing import Union

import imageio.v2 as imageio
import numpy as np


class ImageConverter:
    """Handles conversions between stored rasters and float working images."""

    U8_MAX = 255.0
    U16_MAX = 65535.0

    @classmethod
    def to_gray_float(cls, image: np.ndarray) -> np.ndarray:
        """Convert any raster to single-channel float32 in [0, 1]."""
        img = np.asarray(image)
        dtype = img.dtype
        img = img.astype(np.float32)
        if img.ndim == 3:
            if img.shape[2] >= 3:
                # ITU-R BT.601 luma
                img = img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
            else:
                img = img[..., 0]
        if dtype == np.uint8:
            return img / cls.U8_MAX
        if dtype == np.uint16:
            return img / cls.U16_MAX
        return np.clip(img, 0.0, 1.0)

    @classmethod
    def to_u8(cls, image: np.ndarray) -> np.ndarray:
        """Float [0, 1] to uint8."""
        return np.round(np.clip(image, 0.0, 1.0) * cls.U8_MAX).astype(np.uint8)

    @classmethod
    def to_u16(cls, image: np.ndarray) -> np.ndarray:
        """Float [0, 1] to uint16, value = round(65535 * v)."""
        return np.round(np.clip(image, 0.0, 1.0) * cls.U16_MAX).astype(np.uint16)

    @classmethod
    def mask_to_u8(cls, mask: np.ndarray) -> np.ndarray:
        return np.where(mask, 255, 0).astype(np.uint8)


def read_gray(path: Union[str, Path]) -> np.ndarray:
    """Read an image file as float32 grayscale in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image not found: {path}")
    return ImageConverter.to_gray_float(imageio.imread(path))


def read_mask(path: Union[str, Path]) -> np.ndarray:
    """Read a 0/255 PNG mask as bool."""
    img = np.asarray(imageio.imread(path))
    if img.ndim == 3:
        img = img[..., 0]
    return img > 127


def write_gray(path: Union[str, Path], image: np.ndarray, bits: int = 8) -> None:
    """Write a float [0, 1] raster as an 8- or 16-bit PNG."""
    data = ImageConverter.to_u16(image) if bits == 16 else ImageConverter.to_u8(image)
    imageio.imwrite(path, data)


def write_mask(path: Union[str, Path], mask: np.ndarray) -> None:
    imageio.imwrite(path, ImageConverter.mask_to_u8(mask))
