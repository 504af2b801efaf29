"""
Side-by-side match visualisation: correct matches in green, incorrect in red.
"""

import matplotlib.pyplot as plt
import numpy as np
from typing import Optional, Sequence

from .base import BasePlotter
from ..features import Keypoint, MatchSet, keypoint_xy


def side_by_side(image_a: np.ndarray, image_b: np.ndarray) -> np.ndarray:
    """Both images on one zero-padded canvas, a on the left."""
    h = max(image_a.shape[0], image_b.shape[0])
    canvas = np.zeros((h, image_a.shape[1] + image_b.shape[1]), dtype=np.float32)
    canvas[:image_a.shape[0], :image_a.shape[1]] = image_a
    canvas[:image_b.shape[0], image_a.shape[1]:] = image_b
    return canvas


class MatchPlotter(BasePlotter):
    """Draws an image pair with its putative matches."""

    def plot(self, image_a: np.ndarray = None, image_b: np.ndarray = None,
             kps_a: Sequence[Keypoint] = (), kps_b: Sequence[Keypoint] = (),
             matches: Optional[MatchSet] = None, correct: Optional[np.ndarray] = None,
             title: str = '', **kwargs) -> plt.Figure:
        offset = image_a.shape[1]
        fig, axes = self.create_figure('side_by_side')
        ax = axes[0]
        self.show_image(ax, side_by_side(image_a, image_b))

        pa, pb = keypoint_xy(kps_a), keypoint_xy(kps_b)
        self.draw_keypoints(ax, pa)
        self.draw_keypoints(ax, pb, x_offset=offset)

        if matches is not None and len(matches):
            if correct is None:
                correct = np.ones(len(matches), dtype=bool)
            for ia, ib, ok in zip(matches.index_a, matches.index_b, correct):
                color = self.style.get_color('matches', 'correct' if ok else 'incorrect')
                ax.plot([pa[ia, 0], pb[ib, 0] + offset], [pa[ia, 1], pb[ib, 1]], color=color,
                        linewidth=self.style.line_width_reference, alpha=self.style.match_alpha)
            title = f"{title}  {int(np.sum(correct))}/{len(matches)} correct".strip()

        if title:
            ax.set_title(title, fontsize=self.style.title_size)
        plt.tight_layout()
        return fig
