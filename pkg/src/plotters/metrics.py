"""
Evaluation summary plots: per-pair metrics and their distributions.
"""

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .base import BasePlotter

METRICS = [('rr', 'RR'), ('ms', 'MS'), ('mma', 'MMA@3')]


class MetricsPlotter(BasePlotter):
    """Per-pair bars and histograms of RR / MS / MMA."""

    def plot(self, pairs: pd.DataFrame = None, **kwargs) -> plt.Figure:
        return self.plot_per_pair(pairs)

    def plot_per_pair(self, pairs: pd.DataFrame) -> plt.Figure:
        fig, axes = self.create_figure('summary', nrows=len(METRICS), ncols=1, sharex=True)
        x = np.arange(len(pairs))
        for ax, (key, label) in zip(axes, METRICS):
            values = pairs[key].to_numpy(dtype=float)
            ax.bar(x, values, color=self.style.get_color('metrics', key))
            ax.axhline(np.nanmean(values) if len(values) else 0.0, color='gray',
                       linestyle='--', linewidth=self.style.line_width_reference,
                       label=f'mean {np.nanmean(values):.3f}' if len(values) else 'mean')
            ax.set_ylabel(label)
            ax.set_ylim(0, 1.05)
            self.add_grid(ax)
            self.add_legend(ax, loc='lower right')
        axes[-1].set_xlabel('Pair')
        axes[-1].set_xticks(x)
        axes[-1].set_xticklabels(pairs['pair'].astype(str), rotation=90,
                                 fontsize=self.style.tick_size - 2)
        fig.suptitle('Per-pair matching metrics', fontsize=self.style.title_size + 2)
        plt.tight_layout()
        return fig

    def plot_histograms(self, pairs: pd.DataFrame) -> plt.Figure:
        fig, axes = self.create_figure('single', nrows=1, ncols=len(METRICS))
        bins = np.linspace(0, 1, 21)
        for ax, (key, label) in zip(axes, METRICS):
            ax.hist(pairs[key].to_numpy(dtype=float), bins=bins,
                    color=self.style.get_color('metrics', key))
            ax.set_xlabel(label)
            self.add_grid(ax)
        axes[0].set_ylabel('Pairs')
        plt.tight_layout()
        return fig

    def save_all(self, pairs: pd.DataFrame):
        """Write metrics.<fmt> and histograms.<fmt>; returns the paths."""
        paths = [self.plot_and_save('metrics', pairs=pairs)]
        fig = self.plot_histograms(pairs)
        paths.append(self.save_figure(fig, 'histograms'))
        plt.close(fig)
        return paths
