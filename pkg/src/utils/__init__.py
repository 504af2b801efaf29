"""Utility modules for raster conversions and logging."""

from .conversions import ImageConverter, read_gray, read_mask, write_gray, write_mask
from .logs import setup_logging, banner
