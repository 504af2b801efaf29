"""Thin-plate-spline and homography warps."""

from .warps import (
    WarpConfig,
    TpsWarp,
    Homography,
    CompositeWarp,
    tps_kernel,
    fit_tps,
    apply_warp,
    invert_points,
    warp_image,
    sample_random_homography,
    sample_random_tps,
    sample_random_warp,
    warp_to_dict,
    warp_from_dict,
    save_warp,
    load_warp,
)
