"""
Training curves from the metrics log.
"""

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .base import BasePlotter

TERMS = ['loss_cossim', 'loss_simple', 'loss_peak']


class LossPlotter(BasePlotter):
    """Total loss with a moving average, the individual terms and the learning rate."""

    def plot(self, metrics: pd.DataFrame = None, window: int = 10, **kwargs) -> plt.Figure:
        fig, axes = self.create_figure('single', nrows=3, ncols=1, sharex=True)
        steps = metrics['step'].to_numpy()

        axes[0].plot(steps, metrics['loss'], color=self.style.get_color('training', 'loss'),
                     alpha=0.4, linewidth=self.style.line_width_secondary, label='loss')
        if len(metrics) >= window:
            smooth = metrics['loss'].rolling(window).mean()
            axes[0].plot(steps, smooth, color=self.style.get_color('training', 'loss'),
                         linewidth=self.style.line_width_main, label=f'{window}-step mean')
        axes[0].set_ylabel('Total loss')

        for term in TERMS:
            values = metrics[term].to_numpy(dtype=float)
            if np.all(np.isnan(values)):
                continue
            axes[1].plot(steps, values, color=self.style.get_color('training', term),
                         linewidth=self.style.line_width_secondary, label=term)
        axes[1].set_ylabel('Terms')

        axes[2].plot(steps, metrics['lr'], color=self.style.get_color('training', 'lr'))
        axes[2].set_ylabel('Learning rate')
        axes[2].set_xlabel('Step')

        for ax in axes:
            self.add_grid(ax)
        for ax in axes[:2]:
            if ax.get_legend_handles_labels()[0]:
                self.add_legend(ax)

        fig.suptitle('Detector training', fontsize=self.style.title_size + 2)
        plt.tight_layout()
        return fig
