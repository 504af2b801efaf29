"""
Run configuration.

One RunConfig holds every module's settings. Values are layered as

    dataclass defaults < config/default.yaml < --config FILE < CLI flags

Unknown sections or keys anywhere in the layers raise ConfigError.
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

from .data.synth import PhotometricConfig, SynthConfig
from .errors import ConfigError
from .evaluation.benchmark import EvalConfig
from .extraction import ExtractConfig
from .geometry.warps import WarpConfig
from .heatmaps.builder import HeatmapConfig
from .model.unet import ModelConfig
from .retrieval.bovw import RetrievalConfig
from .styles.themes import PLOT_KEYS, PlotStyle
from .training.losses import LossConfig
from .training.trainer import TrainConfig
from .utils.hashing import config_hash

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).parent.parent / 'config' / 'default.yaml'

SECTIONS = {
    'warp': WarpConfig,
    'photometric': PhotometricConfig,
    'synth': SynthConfig,
    'heatmap': HeatmapConfig,
    'model': ModelConfig,
    'loss': LossConfig,
    'train': TrainConfig,
    'extract': ExtractConfig,
    'eval': EvalConfig,
    'retrieval': RetrievalConfig,
}

def _section(name: str, cls, values: Optional[Dict[str, Any]]):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(f"Section '{name}' must be a mapping, got {type(values).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{name}': {', '.join(unknown)}")
    kwargs = {}
    for key, value in values.items():
        # YAML has no tuples; restore them where the default is one
        if isinstance(value, list) and isinstance(known[key].default, tuple):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid '{name}' settings: {e}") from e


def _plot_section(values: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ConfigError("Section 'plot' must be a mapping")
    unknown = sorted(set(values) - set(PLOT_KEYS))
    if unknown:
        raise ConfigError(f"Unknown key(s) in 'plot': {', '.join(unknown)}")
    return dict(values)


@dataclass
class RunConfig:
    """Every module configuration plus plot styling."""
    warp: WarpConfig = field(default_factory=WarpConfig)
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    heatmap: HeatmapConfig = field(default_factory=HeatmapConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    plot: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'RunConfig':
        """
        Build from a nested mapping; missing sections and keys keep their defaults.

        Raises:
            ConfigError: unknown section/key or a value rejected by a section
        """
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError("Configuration root must be a mapping")
        unknown = sorted(set(data) - set(SECTIONS) - {'plot'})
        if unknown:
            raise ConfigError(f"Unknown configuration section(s): {', '.join(unknown)}")
        kwargs = {name: _section(name, cls_, data.get(name)) for name, cls_ in SECTIONS.items()}
        return cls(plot=_plot_section(data.get('plot')), **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        out = {name: asdict(getattr(self, name)) for name in SECTIONS}
        out['plot'] = dict(self.plot)
        return out

    def hash(self) -> str:
        """Hash of the settings that affect results; plot styling is excluded."""
        data = self.to_dict()
        del data['plot']
        return config_hash(data)

    def override(self, section: str, **values) -> 'RunConfig':
        """Copy with some keys of one section replaced (None values are ignored)."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        current = getattr(self, section)
        merged = {f.name: getattr(current, f.name) for f in fields(current)}
        unknown = sorted(set(values) - set(merged))
        if unknown:
            raise ConfigError(f"Unknown key(s) in '{section}': {', '.join(unknown)}")
        merged.update(values)
        return replace(self, **{section: _section(section, type(current), merged)})

    @property
    def style(self) -> PlotStyle:
        return PlotStyle.from_config({'plot': self.plot})


def merge_dicts(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive merge; values in update win, nested mappings are merged."""
    out = dict(base)
    for key, value in (update or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_dicts(out[key], value)
        else:
            out[key] = value
    return out


def read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    return data


def load_config(path: Optional[Union[str, Path]] = None,
                defaults: Optional[Union[str, Path]] = DEFAULT_CONFIG) -> RunConfig:
    """
    Layer config/default.yaml (when present) and an optional user file.

    Args:
        path: user config file, merged over the defaults
        defaults: base file; None skips it
    """
    data: Dict[str, Any] = {}
    if defaults is not None and Path(defaults).exists():
        data = read_yaml(defaults)
        logger.debug(f"Loaded defaults from {defaults}")
    elif defaults is not None:
        logger.warning(f"Default config not found at {defaults}, using built-in defaults")
    if path is not None:
        data = merge_dicts(data, read_yaml(path))
        logger.debug(f"Loaded config from {path}")
    return RunConfig.from_dict(data)

