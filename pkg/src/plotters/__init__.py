"""Plotting modules for match visualisation, evaluation summaries and training curves."""

from .base import BasePlotter
from .matches import MatchPlotter
from .metrics import MetricsPlotter
from .training import LossPlotter
