"""Tests for the detector losses and the negative-sampling mask."""

import numpy as np
import pytest
import torch

from src.errors import DegenerateTarget, InsufficientNegatives, NoActivePatches
from src.heatmaps import MatchingHeatmap, render_peaks
from src.training import (
    LossConfig,
    cross_view_consistency,
    loss_cossim,
    loss_peak,
    loss_simple,
    loss_terms,
    sample_negative_mask,
    total_loss,
)


def t(array):
    return torch.as_tensor(np.asarray(array), dtype=torch.float64)


def peak_oracle(S, M, N, threshold=0.0):
    h, w = S.shape
    values = []
    for y0 in range(0, h, N):
        rows = min(N, h - y0)
        if rows < N and 2 * rows < N:
            continue
        for x0 in range(0, w, N):
            cols = min(N, w - x0)
            if cols < N and 2 * cols < N:
                continue
            patch = S[y0:y0 + rows, x0:x0 + cols]
            if np.any(M[y0:y0 + rows, x0:x0 + cols] > threshold):
                values.append(patch.max() - patch.mean())
    return 1.0 - np.mean(values)


class TestHandCases:
    def test_peak_one_hot(self):
        S = np.zeros((5, 5))
        S[2, 2] = 1.0
        assert float(loss_peak(t(S), t(S), 5)) == pytest.approx(0.04)

    def test_simple_single_positive(self):
        S, M, F = np.zeros((4, 4)), np.zeros((4, 4)), np.ones((4, 4))
        M[1, 1] = 1.0
        assert float(loss_simple(t(S), t(M), t(F))) == pytest.approx(0.5)

    def test_cossim_extremes(self):
        M = np.zeros((4, 4))
        M[1, 1] = 1.0
        F = np.ones((4, 4))
        assert float(loss_cossim(t(M), t(M), t(F))) == pytest.approx(0.0)
        S = np.zeros((4, 4))
        S[2, 2] = 0.7
        assert float(loss_cossim(t(S), t(M), t(F))) == pytest.approx(1.0)

    def test_mask_hides_skirt(self):
        M = render_peaks([[3, 3]], [1.0], (7, 7))
        F = np.zeros((7, 7))
        F[3, 3] = 1.0
        S = np.zeros((7, 7))
        S[3, 3] = 0.5
        assert float(loss_cossim(t(S), t(M), t(F))) == pytest.approx(0.0, abs=1e-12)


class TestDegenerate:
    def test_zero_target(self):
        z = np.zeros((4, 4))
        with pytest.raises(DegenerateTarget):
            loss_cossim(t(z), t(z), t(np.ones((4, 4))))
        with pytest.raises(DegenerateTarget):
            loss_simple(t(z), t(z), t(np.ones((4, 4))))

    def test_no_active_patch(self):
        with pytest.raises(NoActivePatches):
            loss_peak(t(np.random.default_rng(0).random((10, 10))), t(np.zeros((10, 10))))


class TestOracles:
    def test_cossim_and_simple(self, rng):
        S = rng.random((12, 9))
        M = np.where(rng.random((12, 9)) > 0.8, rng.random((12, 9)), 0.0)
        F = (rng.random((12, 9)) > 0.3).astype(float)
        s, m = (S * F).ravel(), (M * F).ravel()
        expected = 1 - s @ m / (np.linalg.norm(s) * np.linalg.norm(m))
        assert float(loss_cossim(t(S), t(M), t(F))) == pytest.approx(expected)
        n = np.count_nonzero(M * F)
        expected = np.sum((S * F - M * F) ** 2) / (2 * n)
        assert float(loss_simple(t(S), t(M), t(F))) == pytest.approx(expected)

    @pytest.mark.parametrize('shape', [(10, 10), (7, 12), (8, 13), (11, 9)])
    def test_peak(self, rng, shape):
        S = rng.random(shape)
        M = np.where(rng.random(shape) > 0.7, 1.0, 0.0)
        assert float(loss_peak(t(S), t(M), 5)) == pytest.approx(peak_oracle(S, M, 5))

    def test_peak_threshold(self, rng):
        S = rng.random((10, 10))
        M = rng.random((10, 10)) * 0.5
        M[7, 7] = 0.9
        assert float(loss_peak(t(S), t(M), 5, 0.6)) == pytest.approx(peak_oracle(S, M, 5, 0.6))


def test_gradients(rng):
    M = t(np.where(rng.random((8, 8)) > 0.7, 1.0, 0.0))
    F = t((rng.random((8, 8)) > 0.2).astype(float))
    S = t(rng.random((8, 8)) * 0.8 + 0.1).requires_grad_(True)
    assert torch.autograd.gradcheck(lambda s: loss_cossim(s, M, F), (S,))
    assert torch.autograd.gradcheck(lambda s: loss_simple(s, M, F), (S,))
    assert torch.autograd.gradcheck(lambda s: loss_peak(s, M, 5), (S,))


class TestCombinations:
    def test_full_is_weighted_sum(self, rng):
        S = t(rng.random((10, 10)))
        M = t(np.where(rng.random((10, 10)) > 0.7, 1.0, 0.0))
        F = t(np.ones((10, 10)))
        parts = loss_terms(S, M, F)
        expected = 3.0 * parts['loss_cossim'] + 1.0 * parts['loss_simple'] + 0.3 * parts['loss_peak']
        assert float(parts['loss']) == pytest.approx(float(expected))
        assert float(total_loss(S, M, F)) == pytest.approx(float(expected))

    def test_row_alias(self, rng):
        cfg = LossConfig(combination='v')
        assert cfg.combination == 'cossim'
        S = t(rng.random((6, 6)))
        M = t(np.eye(6))
        parts = loss_terms(S, M, t(np.ones((6, 6))), cfg)
        assert set(parts) == {'loss', 'loss_cossim'}

    @pytest.mark.parametrize('kwargs', [{'combination': 'vii'}, {'peak_window': 4},
                                        {'lambda_peak': -1.0}])
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)


def test_cross_view_consistency():
    a, b = torch.zeros(4, 4), torch.zeros(4, 4)
    a[1, 2] = 1.0
    links = torch.tensor([[2, 1, 0, 0], [3, 3, 3, 3]])
    assert float(cross_view_consistency(a, b, links)) == pytest.approx(0.5)
    assert float(cross_view_consistency(a, b, torch.zeros((0, 4)))) == 0.0


class TestSampling:
    def heatmap(self, peaks, shape=(20, 20)):
        peaks = np.array(peaks)
        weights = np.ones(len(peaks))
        return MatchingHeatmap(render_peaks(peaks, weights, shape), peaks, weights)

    def test_balanced(self, rng):
        hm = self.heatmap([[5, 5], [12, 7], [15, 15]])
        mask = sample_negative_mask(hm, rng)
        assert mask.sum() == 6
        assert mask[5, 5] and mask[7, 12] and mask[15, 15]
        negatives = mask & (hm.values == 0)
        assert negatives.sum() == 3
        for x, y in hm.peaks:
            window = mask[y - 1:y + 2, x - 1:x + 2].copy()
            window[1, 1] = False
            assert not window.any()

    def test_respects_validity(self, rng):
        hm = self.heatmap([[2, 2]])
        valid = np.zeros((20, 20), dtype=bool)
        valid[18, 18] = True
        mask = sample_negative_mask(hm, rng, valid)
        assert mask[18, 18] and mask.sum() == 2

    def test_insufficient(self, rng):
        hm = self.heatmap([[1, 1], [4, 1]], shape=(3, 6))
        with pytest.raises(InsufficientNegatives):
            sample_negative_mask(hm, rng)

    def test_deterministic(self):
        hm = self.heatmap([[5, 5], [12, 7]])
        a = sample_negative_mask(hm, np.random.default_rng(3))
        b = sample_negative_mask(hm, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)
