"""
Shared plotter machinery: styled figures, image panels and file output.
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Tuple, Union

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from ..styles.themes import PlotStyle, load_style


class BasePlotter(ABC):
    """Base class for all plotters."""

    def __init__(self, style: Optional[PlotStyle] = None,
                 output_dir: Optional[Union[str, Path]] = None):
        """
        Args:
            style: PlotStyle configuration (loads default if None)
            output_dir: Directory plots are written to; nothing is saved without one
        """
        self.style = style or load_style()
        self.output_dir = Path(output_dir) if output_dir else None
        self.style.apply_to_matplotlib()

    @abstractmethod
    def plot(self, **kwargs) -> plt.Figure:
        """Generate the plot. Must be implemented by subclasses."""

    def create_figure(self, size_type: str = 'single', nrows: int = 1, ncols: int = 1,
                      **kwargs) -> Tuple[plt.Figure, np.ndarray]:
        """Figure sized from the style, with a flat array of axes."""
        fig, axes = plt.subplots(nrows, ncols, figsize=self.style.get_figure_size(size_type),
                                 **kwargs)
        return fig, np.atleast_1d(axes).ravel()

    def show_image(self, ax: plt.Axes, image: np.ndarray) -> None:
        """Grayscale image in [0, 1] without axes."""
        ax.imshow(image, cmap=self.style.image_cmap, vmin=0.0, vmax=1.0, interpolation='nearest')
        ax.set_axis_off()

    def draw_keypoints(self, ax: plt.Axes, xy: np.ndarray, x_offset: float = 0.0) -> None:
        if len(xy):
            ax.scatter(xy[:, 0] + x_offset, xy[:, 1], s=self.style.keypoint_size,
                       c=self.style.get_color('matches', 'keypoint'), linewidths=0)

    def add_grid(self, ax: plt.Axes) -> None:
        ax.grid(self.style.grid_visible, alpha=self.style.grid_alpha,
                linestyle=self.style.grid_linestyle, color=self.style.grid_color)

    def add_legend(self, ax: plt.Axes, loc: str = 'best') -> None:
        ax.legend(loc=loc, framealpha=0.9, fontsize=self.style.legend_size)

    def save_figure(self, fig: plt.Figure, filename: str,
                    subdirectory: Optional[str] = None) -> Optional[Path]:
        """
        Write <output_dir>[/subdirectory]/<filename>.<format>.

        Returns the path, or None when the plotter has no output directory.
        """
        if self.output_dir is None:
            return None
        save_dir = self.output_dir / subdirectory if subdirectory else self.output_dir
        save_dir.mkdir(parents=True, exist_ok=True)
        filepath = save_dir / f"{filename}.{self.style.format}"
        fig.savefig(filepath, dpi=self.style.dpi, bbox_inches='tight',
                    facecolor='white', edgecolor='none')
        return filepath

    def plot_and_save(self, filename: str, subdirectory: Optional[str] = None,
                      **kwargs) -> Optional[Path]:
        """plot(**kwargs), save, close."""
        fig = self.plot(**kwargs)
        try:
            return self.save_figure(fig, filename, subdirectory)
        finally:
            plt.close(fig)
