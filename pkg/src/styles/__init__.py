"""Plot styling and themes."""

from .themes import PLOT_KEYS, PlotStyle, load_style
