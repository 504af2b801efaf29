"""
Detector losses.

All terms take a score map S, a matching heatmap M and a sampling mask F
as (H, W) tensors. Under F only the peak centers and the sampled negatives
are active: S' = S*F and M' = M*F, so the Gaussian skirt of M is ignored
by the cosine and L2 terms. The peakiness term works on the raw S.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import torch
import torch.nn.functional as F_nn

from ..errors import DegenerateTarget, NoActivePatches

# Rows of the loss-combination ablation, in table order.
LOSS_COMBINATIONS = {
    'full': ('cossim', 'simple', 'peak'),
    'cossim+simple': ('cossim', 'simple'),
    'cossim+peak': ('cossim', 'peak'),
    'simple+peak': ('simple', 'peak'),
    'cossim': ('cossim',),
    'simple': ('simple',),
}
ROW_ALIASES = {'i': 'full', 'ii': 'cossim+simple', 'iii': 'cossim+peak',
               'iv': 'simple+peak', 'v': 'cossim', 'vi': 'simple'}


@dataclass
class LossConfig:
    """Loss weights, peakiness window and the term combination."""
    lambda_cossim: float = 3.0
    lambda_simple: float = 1.0
    lambda_peak: float = 0.3
    peak_window: int = 5
    active_threshold: float = 0.0   # M > threshold marks an active peakiness patch
    combination: str = 'full'
    consistency_weight: float = 0.0  # cross-view score agreement, off by default

    def __post_init__(self):
        self.combination = ROW_ALIASES.get(self.combination, self.combination)
        if self.combination not in LOSS_COMBINATIONS:
            raise ValueError(
                f"loss.combination must be one of {sorted(LOSS_COMBINATIONS)} "
                f"or i..vi, got '{self.combination}'"
            )
        if min(self.lambda_cossim, self.lambda_simple, self.lambda_peak,
               self.consistency_weight) < 0:
            raise ValueError("Loss weights must be >= 0")
        if self.peak_window < 3 or self.peak_window % 2 == 0:
            raise ValueError("loss.peak_window must be odd and >= 3")

    @property
    def terms(self):
        return LOSS_COMBINATIONS[self.combination]


def loss_cossim(S: torch.Tensor, M: torch.Tensor, F: torch.Tensor) -> torch.Tensor:
    """1 - cos(S*F, M*F), in [0, 2]. Raises DegenerateTarget when M*F is zero."""
    m = (M * F).reshape(-1)
    if not torch.any(m != 0):
        raise DegenerateTarget("Matching heatmap is zero under the sampling mask")
    s = (S * F).reshape(-1)
    denom = torch.clamp(torch.linalg.vector_norm(s) * torch.linalg.vector_norm(m), min=1e-12)
    return 1.0 - torch.dot(s, m) / denom


def loss_simple(S: torch.Tensor, M: torch.Tensor, F: torch.Tensor) -> torch.Tensor:
    """
    sum((S*F - M*F)^2) / (2n), n = positives under F.
    """
    mf = M * F
    n = int(torch.count_nonzero(mf))
    if n == 0:
        raise DegenerateTarget("No positives under the sampling mask")
    return torch.sum((S * F - mf) ** 2) / (2.0 * n)


def _patch_extent(size: int, n: int) -> int:
    """Rows (or cols) covered by the patch grid; a trailing partial patch counts when >= half size."""
    rem = size % n
    return size - rem + (rem if 2 * rem >= n else 0)


def loss_peak(S: torch.Tensor, M: torch.Tensor, N: int = 5,
              threshold: float = 0.0) -> torch.Tensor:
    """
    1 - mean over active N x N patches of (max S - mean S).

    Patches tile the map from (0, 0). A patch is active when it holds at
    least one M pixel above threshold.

    Raises:
        NoActivePatches: when no patch is active
    """
    h, w = S.shape[-2:]
    hk, wk = _patch_extent(h, N), _patch_extent(w, N)
    s = S[..., :hk, :wk].reshape(1, 1, hk, wk)
    m = M[..., :hk, :wk].reshape(1, 1, hk, wk)
    pad = (0, (-wk) % N, 0, (-hk) % N)

    s_max = F_nn.max_pool2d(F_nn.pad(s, pad, value=float('-inf')), N)
    s_sum = F_nn.avg_pool2d(F_nn.pad(s, pad, value=0.0), N) * (N * N)
    count = F_nn.avg_pool2d(F_nn.pad(torch.ones_like(s), pad, value=0.0), N) * (N * N)
    active = F_nn.max_pool2d(F_nn.pad((m > threshold).to(s.dtype), pad, value=0.0), N) > 0
    if not torch.any(active):
        raise NoActivePatches("No peakiness patch overlaps a nonzero heatmap pixel")

    peakiness = (s_max - s_sum / count)[active]
    return 1.0 - peakiness.mean()


def loss_terms(S: torch.Tensor, M: torch.Tensor, F: torch.Tensor,
               cfg: Optional[LossConfig] = None) -> Dict[str, torch.Tensor]:
    """Weighted total and the individual terms enabled by cfg.combination."""
    cfg = cfg or LossConfig()
    parts = {}
    total = S.new_zeros(())
    if 'cossim' in cfg.terms:
        parts['loss_cossim'] = loss_cossim(S, M, F)
        total = total + cfg.lambda_cossim * parts['loss_cossim']
    if 'simple' in cfg.terms:
        parts['loss_simple'] = loss_simple(S, M, F)
        total = total + cfg.lambda_simple * parts['loss_simple']
    if 'peak' in cfg.terms:
        parts['loss_peak'] = loss_peak(S, M, cfg.peak_window, cfg.active_threshold)
        total = total + cfg.lambda_peak * parts['loss_peak']
    parts['loss'] = total
    return parts


def total_loss(S: torch.Tensor, M: torch.Tensor, F: torch.Tensor,
               cfg: Optional[LossConfig] = None) -> torch.Tensor:
    """Weighted sum of the enabled cossim, simple and peak terms."""
    return loss_terms(S, M, F, cfg)['loss']


def cross_view_consistency(S_b: torch.Tensor, S_bp: torch.Tensor,
                           links: torch.Tensor) -> torch.Tensor:
    """
    Mean squared score difference between corresponding pixels of the two
    views; links is (m, 4) integer xb, yb, xbp, ybp. Zero without links.
    """
    if links.numel() == 0:
        return S_b.new_zeros(())
    links = links.long()
    a = S_b[links[:, 1], links[:, 0]]
    b = S_bp[links[:, 3], links[:, 2]]
    return torch.mean((a - b) ** 2)
