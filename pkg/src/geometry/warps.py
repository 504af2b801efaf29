"""
Thin-plate-spline and homography warps.

Geometric substrate for synthetic pair generation and ground-truth
correspondence. All point arrays are (N, 2) in pixel (x, y) order, i.e.
x indexes columns and y indexes rows.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import cv2
import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from ..errors import NonInvertibleWarp, ProjectiveDivideByZero, SingularSystem

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, list, tuple]

# Condition number above which the augmented TPS system is treated as degenerate
MAX_CONDITION = 1e12
# |w| below this after projection counts as a point at infinity
PROJECTIVE_EPS = 1e-12
# Unconverged iterates further than this outside the input are not counted as failures
DOMAIN_MARGIN = 1.0


@dataclass
class WarpConfig:
    """Random warp sampling parameters."""
    max_corner_shift: float = 0.1   # fraction of the image diagonal
    grid: int = 8                   # control lattice is grid x grid
    tps_sigma: float = 0.03         # displacement std as a fraction of min(H, W)
    use_tps: bool = True            # False -> homography-only warps
    regularization: float = 0.0
    inverse_iterations: int = 20
    inverse_tolerance: float = 0.05  # pixels
    max_invalid_fraction: float = 0.01


@dataclass
class TpsWarp:
    """f(x) = A [x, y, 1]^T + sum_i rho(|x - c_i|) w_i"""
    affine: np.ndarray           # (2, 3)
    weights: np.ndarray          # (n_c, 2)
    control_points: np.ndarray   # (n_c, 2)

    @classmethod
    def identity(cls, width: float = 1.0, height: float = 1.0) -> 'TpsWarp':
        """Identity TPS anchored on the corners of a width x height frame."""
        cps = np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])
        return cls(
            affine=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            weights=np.zeros((4, 2)),
            control_points=cps,
        )


@dataclass
class Homography:
    """Nonsingular 3x3 projective map normalised so that matrix[2, 2] == 1."""
    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(m)) < 1e-15:
            raise ValueError("Homography matrix is singular")
        if abs(m[2, 2]) > 1e-15:
            m = m / m[2, 2]
        self.matrix = m

    @classmethod
    def identity(cls) -> 'Homography':
        return cls(np.eye(3))

    def inverse(self) -> 'Homography':
        return Homography(np.linalg.inv(self.matrix))


@dataclass
class CompositeWarp:
    """Homography applied first, then the TPS."""
    homography: Homography
    tps: TpsWarp

    @classmethod
    def identity(cls, width: float = 1.0, height: float = 1.0) -> 'CompositeWarp':
        return cls(Homography.identity(), TpsWarp.identity(width, height))


Warp = Union[TpsWarp, Homography, CompositeWarp]


# =============================================================================
# TPS fitting
# =============================================================================

def tps_kernel(r: ArrayLike) -> np.ndarray:
    """rho(r) = r^2 log r, with the limit value 0 at r = 0."""
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos])
    return out if out.ndim else float(out)


def _augmented_system(points: np.ndarray, regularization: float) -> np.ndarray:
    n = len(points)
    K = tps_kernel(cdist(points, points))
    if regularization:
        K = K + regularization * np.eye(n)
    P = np.hstack([np.ones((n, 1)), points])
    L = np.zeros((n + 3, n + 3))
    L[:n, :n] = K
    L[:n, n:] = P
    L[n:, :n] = P.T
    return L


def _check_degenerate(src: np.ndarray) -> None:
    # Conditioning is judged on a scale-free copy so that pixel units do not
    # inflate the estimate.
    centered = src - src.mean(axis=0)
    scale = np.abs(centered).max()
    if scale == 0:
        raise SingularSystem("TPS control points are all identical")
    cond = np.linalg.cond(_augmented_system(centered / scale, 0.0))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystem(
            f"TPS control points are degenerate (condition number {cond:.3g})"
        )


def fit_tps(src: ArrayLike, dst: ArrayLike, regularization: float = 0.0) -> TpsWarp:
    """
    Fit the thin-plate spline mapping src onto dst.

    Args:
        src: (n_c, 2) control points in the reference frame
        dst: (n_c, 2) target locations
        regularization: lambda added to the kernel block; 0 interpolates exactly

    Returns:
        TpsWarp with control_points = src

    Raises:
        SingularSystem: if src is collinear or contains duplicates
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError(f"src and dst sizes differ: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise SingularSystem(f"TPS needs at least 3 control points, got {len(src)}")
    if regularization < 0:
        raise ValueError("regularization must be nonnegative")

    _check_degenerate(src)

    n = len(src)
    L = _augmented_system(src, regularization)
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    try:
        sol = linalg.solve(L, rhs, assume_a='sym')
    except (linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(f"TPS system could not be solved: {e}") from e

    weights = sol[:n]
    a = sol[n:]  # rows: constant, x, y
    affine = np.array([
        [a[1, 0], a[2, 0], a[0, 0]],
        [a[1, 1], a[2, 1], a[0, 1]],
    ])
    return TpsWarp(affine=affine, weights=weights, control_points=src.copy())


# =============================================================================
# Forward application
# =============================================================================

def _apply_tps(tps: TpsWarp, points: np.ndarray) -> np.ndarray:
    out = points @ tps.affine[:, :2].T + tps.affine[:, 2]
    if len(tps.control_points) and np.any(tps.weights):
        out = out + tps_kernel(cdist(points, tps.control_points)) @ tps.weights
    return out


def _apply_homography(h: Homography, points: np.ndarray, strict: bool = True) -> np.ndarray:
    ph = points @ h.matrix[:, :2].T + h.matrix[:, 2]
    w = ph[:, 2]
    at_infinity = np.abs(w) < PROJECTIVE_EPS
    if np.any(at_infinity):
        if strict:
            raise ProjectiveDivideByZero(
                f"{int(at_infinity.sum())} point(s) mapped to the line at infinity"
            )
        w = np.where(at_infinity, np.nan, w)
    return ph[:, :2] / w[:, None]


def apply_warp(warp: Warp, points: ArrayLike, strict: bool = True) -> np.ndarray:
    """
    Map points from the reference frame to the target frame.

    Args:
        warp: TpsWarp, Homography or CompositeWarp
        points: (N, 2) array of (x, y)
        strict: raise on points sent to infinity instead of returning NaN

    Returns:
        (N, 2) warped points

    Raises:
        ProjectiveDivideByZero: if a homography sends a point to infinity
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if isinstance(warp, CompositeWarp):
        return _apply_tps(warp.tps, _apply_homography(warp.homography, pts, strict))
    if isinstance(warp, Homography):
        return _apply_homography(warp, pts, strict)
    if isinstance(warp, TpsWarp):
        return _apply_tps(warp, pts)
    raise TypeError(f"Unsupported warp type: {type(warp).__name__}")


# =============================================================================
# Inversion and resampling
# =============================================================================

def _swapped_fit(tps: TpsWarp) -> Optional[TpsWarp]:
    """TPS fitted from the warped control points back to the originals."""
    if not len(tps.control_points) or not np.any(tps.weights):
        return None
    try:
        return fit_tps(_apply_tps(tps, tps.control_points), tps.control_points)
    except SingularSystem:
        return None


def _tps_jacobian(tps: TpsWarp, points: np.ndarray, mapped: np.ndarray,
                  step: float = 1e-4) -> np.ndarray:
    """Forward-difference Jacobian, (N, 2, 2) with J[:, i, j] = d f_i / d x_j."""
    jac = np.empty((len(points), 2, 2))
    for j in range(2):
        shifted = points.copy()
        shifted[:, j] += step
        jac[:, :, j] = (_apply_tps(tps, shifted) - mapped) / step
    return jac


def _invert_tps(tps: TpsWarp, targets: np.ndarray, iterations: int,
                tolerance: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Damped Newton search for f(z) = y.

    Starts from the swapped-fit TPS (or the affine inverse when there is no
    nonlinear part). A step that does not reduce the residual is halved.
    """
    a_inv = np.linalg.inv(tps.affine[:, :2])
    seed = _swapped_fit(tps)
    if seed is None:
        z = (targets - tps.affine[:, 2]) @ a_inv.T
    else:
        z = _apply_tps(seed, targets)

    mapped = _apply_tps(tps, z)
    residual = mapped - targets
    err = np.linalg.norm(residual, axis=1)
    damping = np.ones(len(targets))

    for _ in range(iterations):
        active = np.flatnonzero(np.isfinite(err) & (err > tolerance))
        if active.size == 0:
            break
        za, ra = z[active], residual[active]
        jac = _tps_jacobian(tps, za, mapped[active])
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        delta = ra @ a_inv.T
        ok = np.abs(det) > 1e-8
        if np.any(ok):
            j, r, d = jac[ok], ra[ok], det[ok]
            delta[ok, 0] = (j[:, 1, 1] * r[:, 0] - j[:, 0, 1] * r[:, 1]) / d
            delta[ok, 1] = (j[:, 0, 0] * r[:, 1] - j[:, 1, 0] * r[:, 0]) / d

        cand = za - damping[active, None] * delta
        cand_mapped = _apply_tps(tps, cand)
        cand_res = cand_mapped - targets[active]
        cand_err = np.linalg.norm(cand_res, axis=1)

        better = cand_err < err[active]
        upd = active[better]
        z[upd] = cand[better]
        mapped[upd] = cand_mapped[better]
        residual[upd] = cand_res[better]
        err[upd] = cand_err[better]
        damping[upd] = 1.0
        damping[active[~better]] *= 0.5

    converged = np.isfinite(err) & (err <= tolerance)
    return z, converged


def _inverse_search(warp: Warp, pts: np.ndarray, iterations: int,
                    tolerance: float) -> Tuple[np.ndarray, np.ndarray]:
    """Last iterate in the reference frame and the converged mask."""
    if isinstance(warp, Homography):
        src = _apply_homography(warp.inverse(), pts, strict=False)
        return src, np.all(np.isfinite(src), axis=1)
    if isinstance(warp, TpsWarp):
        return _invert_tps(warp, pts, iterations, tolerance)
    if isinstance(warp, CompositeWarp):
        z, ok = _invert_tps(warp.tps, pts, iterations, tolerance)
        src = _apply_homography(warp.homography.inverse(), z, strict=False)
        return src, ok & np.all(np.isfinite(src), axis=1)
    raise TypeError(f"Unsupported warp type: {type(warp).__name__}")


def invert_points(warp: Warp, points: ArrayLike, iterations: int = 20,
                  tolerance: float = 0.05) -> Tuple[np.ndarray, np.ndarray]:
    """
    Numerically invert a warp at the given target points.

    Returns:
        (source points, converged mask). Non-converged entries are NaN.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    src, ok = _inverse_search(warp, pts, iterations, tolerance)
    src = src.copy()
    src[~ok] = np.nan
    return src, ok


def _inside(points: np.ndarray, width: int, height: int, margin: float) -> np.ndarray:
    with np.errstate(invalid='ignore'):
        return (
            (points[:, 0] >= -margin) & (points[:, 0] <= width - 1 + margin)
            & (points[:, 1] >= -margin) & (points[:, 1] <= height - 1 + margin)
        )


def warp_image(image: np.ndarray, warp: Warp,
               out_shape: Optional[Tuple[int, int]] = None,
               cfg: Optional[WarpConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Resample an image under a warp by inverse mapping.

    Args:
        image: (H, W) grayscale raster
        warp: reference-to-target warp
        out_shape: (H', W') of the output; defaults to the input shape
        cfg: supplies inverse-search iterations, tolerance and failure fraction

    Returns:
        (warped raster, validity mask). Pixels whose source lies outside the
        input are 0 and False in the mask.

    Raises:
        NonInvertibleWarp: if the inverse search fails for too many pixels
    """
    cfg = cfg or WarpConfig()
    if image.size == 0:
        raise ValueError("Cannot warp an empty image")
    h_in, w_in = image.shape[:2]
    h_out, w_out = out_shape or (h_in, w_in)

    ys, xs = np.mgrid[0:h_out, 0:w_out]
    targets = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    src, converged = _inverse_search(warp, targets, cfg.inverse_iterations,
                                     cfg.inverse_tolerance)
    in_domain = _inside(src, w_in, h_in, DOMAIN_MARGIN)

    # Unconverged pixels whose iterate left the input are invalid either way
    failed = float(np.mean(~converged & in_domain))
    if failed > cfg.max_invalid_fraction:
        raise NonInvertibleWarp(
            f"Inverse search failed for {failed:.1%} of pixels "
            f"(limit {cfg.max_invalid_fraction:.1%})"
        )

    inside = converged & _inside(src, w_in, h_in, 1e-6)
    src = np.where(inside[:, None], np.clip(src, 0, [w_in - 1, h_in - 1]), -1.0)

    map_x = src[:, 0].reshape(h_out, w_out).astype(np.float32)
    map_y = src[:, 1].reshape(h_out, w_out).astype(np.float32)
    out = cv2.remap(image.astype(np.float32), map_x, map_y, cv2.INTER_LINEAR,
                    borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    valid = inside.reshape(h_out, w_out)
    out[~valid] = 0
    return out, valid


# =============================================================================
# Random sampling
# =============================================================================

def _corners(shape: Tuple[int, int]) -> np.ndarray:
    h, w = shape
    return np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=np.float64)


def sample_random_homography(cfg: WarpConfig, rng: np.random.Generator,
                             shape: Tuple[int, int]) -> Homography:
    """
    Perturb the four image corners outward by uniform offsets bounded by
    cfg.max_corner_shift * diagonal and solve the 4-point homography.
    """
    h, w = shape
    bound = cfg.max_corner_shift * np.hypot(w - 1, h - 1)
    outward = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=np.float64)
    offsets = outward * rng.uniform(0.0, bound, size=(4, 2))
    src = _corners(shape)
    dst = src + offsets
    if not np.any(offsets):
        return Homography.identity()
    m = cv2.getPerspectiveTransform(src.astype(np.float32), dst.astype(np.float32))
    return Homography(m)


def control_lattice(shape: Tuple[int, int], grid: int) -> np.ndarray:
    """grid x grid control points spanning the image, row-major."""
    h, w = shape
    xs = np.linspace(0, w - 1, grid)
    ys = np.linspace(0, h - 1, grid)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def sample_random_tps(cfg: WarpConfig, rng: np.random.Generator,
                      shape: Tuple[int, int]) -> TpsWarp:
    """Displace a control lattice by Gaussian noise and fit the TPS."""
    cps = control_lattice(shape, cfg.grid)
    std = cfg.tps_sigma * min(shape)
    dst = cps + rng.normal(0.0, std, size=cps.shape) if std > 0 else cps.copy()
    return fit_tps(cps, dst, cfg.regularization)


def sample_random_warp(cfg: WarpConfig, rng: np.random.Generator,
                       shape: Tuple[int, int]) -> CompositeWarp:
    """Homography followed by TPS; identity TPS when cfg.use_tps is off."""
    homography = sample_random_homography(cfg, rng, shape)
    if cfg.use_tps:
        tps = sample_random_tps(cfg, rng, shape)
    else:
        h, w = shape
        tps = TpsWarp.identity(w - 1, h - 1)
    return CompositeWarp(homography, tps)


# =============================================================================
# JSON persistence
# =============================================================================

def warp_to_dict(warp: CompositeWarp) -> dict:
    return {
        'homography': [float(v) for v in warp.homography.matrix.ravel()],
        'tps': {
            'affine': [float(v) for v in warp.tps.affine.ravel()],
            'control_points': warp.tps.control_points.tolist(),
            'weights': warp.tps.weights.tolist(),
        },
    }


def warp_from_dict(data: dict) -> CompositeWarp:
    try:
        homography = Homography(np.array(data['homography'], dtype=np.float64).reshape(3, 3))
        tps = data['tps']
        affine = np.array(tps['affine'], dtype=np.float64).reshape(2, 3)
        cps = np.array(tps['control_points'], dtype=np.float64).reshape(-1, 2)
        weights = np.array(tps['weights'], dtype=np.float64).reshape(-1, 2)
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"Malformed warp document: {e}") from e
    if len(cps) != len(weights):
        raise ValueError("Warp document has mismatched control points and weights")
    return CompositeWarp(homography, TpsWarp(affine, weights, cps))


def save_warp(warp: CompositeWarp, path: Union[str, Path]) -> None:
    with open(path, 'w') as f:
        json.dump(warp_to_dict(warp), f)


def load_warp(path: Union[str, Path]) -> CompositeWarp:
    with open(path, 'r') as f:
        return warp_from_dict(json.load(f))
