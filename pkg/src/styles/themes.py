"""
Plot styling for match visualisations, metric summaries and training curves.

The `plot` section of the run configuration maps onto PlotStyle; it never
affects results, so RunConfig.hash() leaves it out.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import matplotlib.pyplot as plt
import yaml

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).parent.parent.parent / 'config' / 'default.yaml'

# Nested plot sections: yaml key -> {yaml sub-key: PlotStyle attribute}
NESTED_KEYS: Dict[str, Dict[str, str]] = {
    'fonts': {'family': 'font_family', 'title_size': 'title_size', 'label_size': 'label_size',
              'tick_size': 'tick_size', 'legend_size': 'legend_size'},
    'grid': {'visible': 'grid_visible', 'alpha': 'grid_alpha',
             'linestyle': 'grid_linestyle', 'color': 'grid_color'},
    'line_width': {'main': 'line_width_main', 'secondary': 'line_width_secondary',
                   'reference': 'line_width_reference'},
    'images': {'cmap': 'image_cmap', 'keypoint_size': 'keypoint_size', 'match_alpha': 'match_alpha'},
}
PLOT_KEYS = ('dpi', 'format', 'figure_sizes', 'colors') + tuple(NESTED_KEYS)

FALLBACK_COLORS = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd']


@dataclass
class PlotStyle:
    """Container for plot styling configuration."""

    dpi: int = 150
    format: str = 'png'

    figure_sizes: Dict[str, Tuple[float, float]] = field(default_factory=lambda: {
        'single': (10, 6),
        'side_by_side': (14, 6),
        'summary': (12, 8),
    })

    font_family: str = 'DejaVu Sans'
    title_size: int = 14
    label_size: int = 12
    tick_size: int = 10
    legend_size: int = 10

    grid_visible: bool = True
    grid_alpha: float = 0.3
    grid_linestyle: str = '--'
    grid_color: str = '#888888'

    line_width_main: float = 1.5
    line_width_secondary: float = 1.0
    line_width_reference: float = 0.8

    # Image panels
    image_cmap: str = 'gray'
    keypoint_size: float = 2.0
    match_alpha: float = 0.8

    colors: Dict[str, Dict[str, str]] = field(default_factory=lambda: {
        'matches': {'correct': '#2ca02c', 'incorrect': '#d62728', 'keypoint': '#ffbf00'},
        'metrics': {'rr': '#1f77b4', 'ms': '#ff7f0e', 'mma': '#2ca02c'},
        'training': {'loss': '#1f77b4', 'loss_cossim': '#d62728',
                     'loss_simple': '#ff7f0e', 'loss_peak': '#9467bd', 'lr': '#888888'},
    })

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> 'PlotStyle':
        """Create PlotStyle from a configuration dictionary holding a `plot` section."""
        style = cls()
        plot_config = config.get('plot', {}) or {}

        style.dpi = plot_config.get('dpi', style.dpi)
        style.format = plot_config.get('format', style.format)
        for key, value in (plot_config.get('figure_sizes', {}) or {}).items():
            style.figure_sizes[key] = tuple(value)

        for section, attrs in NESTED_KEYS.items():
            values = plot_config.get(section, {}) or {}
            for key, attr in attrs.items():
                if key in values:
                    setattr(style, attr, values[key])

        # merged per category over the defaults
        for category, palette in (plot_config.get('colors', {}) or {}).items():
            style.colors.setdefault(category, {}).update(palette)

        return style

    def apply_to_matplotlib(self) -> None:
        """Apply style settings to matplotlib defaults."""
        plt.rcParams.update({
            'font.family': self.font_family,
            'font.size': self.label_size,
            'axes.titlesize': self.title_size,
            'axes.labelsize': self.label_size,
            'xtick.labelsize': self.tick_size,
            'ytick.labelsize': self.tick_size,
            'legend.fontsize': self.legend_size,
            'figure.dpi': self.dpi,
            'savefig.dpi': self.dpi,
            'grid.alpha': self.grid_alpha,
            'grid.linestyle': self.grid_linestyle,
            'grid.color': self.grid_color,
            'lines.linewidth': self.line_width_main,
            'image.cmap': self.image_cmap,
        })

    def get_color(self, category: str, variable: str) -> str:
        palette = self.colors.get(category, {})
        if variable in palette:
            return palette[variable]
        return FALLBACK_COLORS[sum(map(ord, variable)) % len(FALLBACK_COLORS)]

    def get_figure_size(self, size_type: str) -> Tuple[float, float]:
        return self.figure_sizes.get(size_type, (10, 6))


def load_style(config_path: Optional[str] = None) -> PlotStyle:
    """PlotStyle from the `plot` section of a YAML file (config/default.yaml by default)."""
    config_path = Path(config_path) if config_path else DEFAULT_CONFIG
    if not config_path.exists():
        logger.warning(f"Config not found at {config_path}, using default plot style")
        return PlotStyle()

    with open(config_path, 'r') as f:
        config = yaml.safe_load(f) or {}

    return PlotStyle.from_config(config)
