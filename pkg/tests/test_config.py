"""Tests for layered YAML configuration."""

import pytest
import yaml

from src.config import DEFAULT_CONFIG, RunConfig, load_config, merge_dicts, read_yaml
from src.errors import ConfigError

EXAMPLES = DEFAULT_CONFIG.parent / 'examples'


def write(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def test_default_file_matches_builtin_defaults():
    assert load_config().hash() == RunConfig().hash()


def test_lists_become_tuples():
    cfg = RunConfig.from_dict({'photometric': {'contrast': [0.5, 1.5]}})
    assert cfg.photometric.contrast == (0.5, 1.5)


def test_user_file_overrides_defaults(tmp_path):
    path = write(tmp_path / 'c.yaml', {'train': {'lr': 0.01}, 'heatmap': {'weighting': 'equal'}})
    cfg = load_config(path)
    assert cfg.train.lr == 0.01
    assert cfg.train.batch_size == 12
    assert cfg.heatmap.weighting == 'equal'


def test_override_wins_and_ignores_none():
    cfg = RunConfig().override('extract', top_k=10, min_score=None)
    assert cfg.extract.top_k == 10
    assert cfg.extract.min_score == 0.2
    assert RunConfig().override('extract', top_k=None) == RunConfig()


def test_override_validates():
    with pytest.raises(ConfigError):
        RunConfig().override('extract', nms_window=4)
    with pytest.raises(ConfigError):
        RunConfig().override('extract', window=3)


@pytest.mark.parametrize('data', [
    {'bogus': {}},
    {'warp': {'bogus': 1}},
    {'plot': {'bogus': 1}},
    {'loss': {'combination': 'nonsense'}},
    {'train': 3},
])
def test_invalid(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_hash_ignores_plot_styling():
    a = RunConfig.from_dict({'plot': {'dpi': 300}})
    assert a.hash() == RunConfig().hash()
    assert a.style.dpi == 300
    assert RunConfig.from_dict({'eval': {'tol': 5.0}}).hash() != RunConfig().hash()


def test_merge_dicts():
    merged = merge_dicts({'a': {'x': 1, 'y': 2}, 'b': 1}, {'a': {'y': 3}, 'c': 4})
    assert merged == {'a': {'x': 1, 'y': 3}, 'b': 1, 'c': 4}


def test_read_yaml_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_yaml(tmp_path / 'missing.yaml')
    (tmp_path / 'bad.yaml').write_text('warp: [1, 2\n')
    with pytest.raises(ConfigError):
        read_yaml(tmp_path / 'bad.yaml')
    (tmp_path / 'list.yaml').write_text('- 1\n- 2\n')
    with pytest.raises(ConfigError):
        read_yaml(tmp_path / 'list.yaml')
    (tmp_path / 'empty.yaml').write_text('')
    assert read_yaml(tmp_path / 'empty.yaml') == {}


@pytest.mark.parametrize('name', sorted(p.name for p in EXAMPLES.glob('*.yaml')))
def test_example_presets_load(name):
    load_config(EXAMPLES / name)


def test_loss_presets():
    assert load_config(EXAMPLES / 'loss_ii.yaml').loss.combination == 'cossim+simple'
    assert not load_config(EXAMPLES / 'homography_only.yaml').warp.use_tps
