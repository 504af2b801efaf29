"""Keypoint/descriptor plugins, exchange format and ratio matching."""

from .types import (
    Keypoint,
    DescriptorSet,
    MatchSet,
    keypoints_to_array,
    array_to_keypoints,
    keypoint_xy,
)
from .base import FeaturePlugin, PluginSpec
from .builtin import BuiltinPlugin, detect_builtin, describe_builtin
from .external import ExternalPlugin, run_external_plugin, parse_plugin_arg, resolve_plugin
from .matching import match_ratio
from .exchange import (
    write_keypoints_csv,
    read_keypoints_csv,
    write_descriptors,
    read_descriptors,
)


def keypoint_budget(shape, fraction: float = 0.02) -> int:
    """Salient-point budget k = fraction * H * W (2400 for 400 x 300)."""
    h, w = shape[:2]
    return max(1, int(round(fraction * h * w)))
