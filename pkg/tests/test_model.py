"""Tests for the score-map network and its weight files."""

import numpy as np
import pytest
import torch

from src.data import synthetic_anchor
from src.errors import ConfigMismatch, CorruptFile, ShapeError, Unimplemented
from src.model import (
    ModelConfig,
    build_model,
    count_parameters,
    forward,
    load_weights,
    predict_score_map,
    read_weights_header,
    save_weights,
)


@pytest.fixture(scope='module')
def model():
    return build_model(seed=0).eval()


def test_parameter_count(model):
    assert count_parameters(model) == 1034881


@pytest.mark.parametrize('shape', [(40, 48), (37, 53), (9, 17)])
def test_output_matches_input_shape(model, shape):
    with torch.no_grad():
        out = forward(model, np.random.default_rng(0).random(shape, dtype=np.float32))
    assert tuple(out.shape) == (1, 1) + shape
    assert torch.all((out > 0) & (out < 1))


def test_padding_disabled():
    net = build_model(ModelConfig(pad_input=False)).eval()
    with torch.no_grad():
        assert forward(net, np.zeros((40, 48), np.float32)).shape[-2:] == (40, 48)
        with pytest.raises(ShapeError):
            forward(net, np.zeros((37, 48), np.float32))


def test_reserved_variant():
    with pytest.raises(Unimplemented):
        build_model(ModelConfig(variant='dcn_encoder'))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(variant='resnet')
    with pytest.raises(ValueError):
        ModelConfig(decoder_dims=[64, 32, 1])
    with pytest.raises(ValueError):
        ModelConfig(kernel_size=4)


def test_seeded_initialisation():
    a, b = build_model(seed=3), build_model(seed=3)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = build_model(seed=4)
    assert not torch.equal(next(a.parameters()), next(c.parameters()))


def test_translation_equivariance(model):
    texture = synthetic_anchor((272, 272), np.random.default_rng(11))
    s1 = predict_score_map(model, texture[:256, :256])
    s2 = predict_score_map(model, texture[8:264, 8:264])
    np.testing.assert_allclose(s1[100:156, 100:156], s2[92:148, 92:148], atol=1e-4)


def test_predict_restores_mode():
    net = build_model()
    net.train()
    predict_score_map(net, np.zeros((16, 16), np.float32))
    assert net.training


class TestWeights:
    def test_round_trip(self, tmp_path, model):
        save_weights(model, tmp_path / 'w.nrkw', extra={'step': 7})
        loaded = load_weights(tmp_path / 'w.nrkw', ModelConfig())
        image = np.random.default_rng(1).random((32, 40), dtype=np.float32)
        np.testing.assert_array_equal(predict_score_map(loaded, image),
                                      predict_score_map(model, image))
        assert read_weights_header(tmp_path / 'w.nrkw')['extra'] == {'step': 7}

    def test_config_mismatch(self, tmp_path, model):
        save_weights(model, tmp_path / 'w.nrkw')
        with pytest.raises(ConfigMismatch):
            load_weights(tmp_path / 'w.nrkw', ModelConfig(kernel_size=5))

    def test_bad_magic(self, tmp_path):
        (tmp_path / 'w.nrkw').write_bytes(b'XXXX' + bytes(20))
        with pytest.raises(CorruptFile):
            load_weights(tmp_path / 'w.nrkw')

    def test_truncated(self, tmp_path, model):
        save_weights(model, tmp_path / 'w.nrkw')
        data = (tmp_path / 'w.nrkw').read_bytes()
        (tmp_path / 'w.nrkw').write_bytes(data[:-100])
        with pytest.raises(CorruptFile):
            load_weights(tmp_path / 'w.nrkw')

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_weights(tmp_path / 'nope.nrkw')
