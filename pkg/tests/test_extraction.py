"""Tests for score-map post-processing."""

import numpy as np
import pytest

from src.extraction import ExtractConfig, NetworkDetector, edge_filter, extract, nms, sort_keypoints
from src.features import Keypoint
from src.model import build_model


def nms_oracle(S, window):
    h, w = S.shape
    half = window // 2
    kept = []
    for y in range(h):
        for x in range(w):
            ys = slice(max(0, y - half), min(h, y + half + 1))
            xs = slice(max(0, x - half), min(w, x + half + 1))
            patch = S[ys, xs]
            if S[y, x] != patch.max() or patch.max() <= patch.min():
                continue
            earlier_tie = False
            for yy in range(ys.start, ys.stop):
                for xx in range(xs.start, xs.stop):
                    if (yy, xx) < (y, x) and S[yy, xx] == S[y, x]:
                        earlier_tie = True
            if not earlier_tie:
                kept.append((x, y))
    return kept


def quadratic(a, b, c=0.0, size=11):
    """S = -(a x^2 + b y^2) / 2 + c x y around the center."""
    r = np.arange(size) - size // 2
    x, y = np.meshgrid(r, r)
    return -(a * x ** 2 + b * y ** 2) / 2.0 + c * x * y


class TestNms:
    @pytest.mark.parametrize('window', [3, 5, 7])
    def test_continuous_maps(self, rng, window):
        S = rng.random((20, 24))
        got = [(int(k.x), int(k.y)) for k in nms(S, window, subpixel=False)]
        assert got == nms_oracle(S, window)

    @pytest.mark.parametrize('seed', range(4))
    def test_quantised_maps_with_ties(self, seed):
        S = np.random.default_rng(seed).integers(0, 4, size=(12, 15)) / 4.0
        got = [(int(k.x), int(k.y)) for k in nms(S, 5, subpixel=False)]
        assert got == nms_oracle(S, 5)

    def test_flat_map(self):
        assert nms(np.full((10, 10), 0.3)) == []

    def test_plateau_keeps_first(self):
        S = np.zeros((9, 9))
        S[4, 4] = S[4, 5] = 1.0
        kps = nms(S, 3, subpixel=False)
        assert [(k.x, k.y) for k in kps] == [(4.0, 4.0)]

    def test_subpixel(self):
        S = np.zeros((7, 7))
        S[3, 2], S[3, 3], S[3, 4] = 0.5, 1.0, 0.75
        (kp,) = nms(S, 3)
        assert kp.x == pytest.approx(3 + 0.5 * (0.5 - 0.75) / (0.5 - 2.0 + 0.75))
        assert kp.y == pytest.approx(3.0)
        assert kp.score == 1.0

    def test_even_window(self):
        with pytest.raises(ValueError):
            nms(np.zeros((5, 5)), 4)


class TestEdgeFilter:
    def centre(self, S):
        c = S.shape[0] // 2
        return [Keypoint(c, c, float(S[c, c]))]

    def test_isotropic_kept(self):
        S = quadratic(1.0, 1.0)
        assert len(edge_filter(S, self.centre(S))) == 1

    def test_ridge_rejected(self):
        S = quadratic(1.0, 0.0)
        assert edge_filter(S, self.centre(S)) == []

    def test_saddle_rejected(self):
        S = quadratic(1.0, -1.0)
        assert edge_filter(S, self.centre(S)) == []

    def test_ratio_boundary(self):
        # trace^2 / det equals (r + 1)^2 / r exactly for r = 10
        S = quadratic(10.0, 1.0)
        assert edge_filter(S, self.centre(S), 10.0) == []
        S = quadratic(9.0, 1.0)
        assert len(edge_filter(S, self.centre(S), 10.0)) == 1

    def test_brute_force(self, rng):
        S = rng.random((15, 15))
        kps = [Keypoint(x, y) for y in range(1, 14) for x in range(1, 14)]
        bound = 121.0 / 10.0
        expected = []
        for k in kps:
            x, y = int(k.x), int(k.y)
            dxx = S[y, x + 1] - 2 * S[y, x] + S[y, x - 1]
            dyy = S[y + 1, x] - 2 * S[y, x] + S[y - 1, x]
            dxy = (S[y + 1, x + 1] - S[y + 1, x - 1] - S[y - 1, x + 1] + S[y - 1, x - 1]) / 4
            det = dxx * dyy - dxy ** 2
            if det > 0 and (dxx + dyy) ** 2 / det < bound:
                expected.append(k)
        assert edge_filter(S, kps, 10.0) == expected


class TestExtract:
    def test_threshold_and_top_k(self):
        S = np.zeros((30, 30))
        for i, (x, y) in enumerate([(5, 5), (15, 5), (25, 5), (5, 15), (15, 15)]):
            S[y - 1:y + 2, x - 1:x + 2] = 0.1 * (i + 1) * np.array([[0.5, 0.7, 0.5],
                                                                    [0.7, 1.0, 0.7],
                                                                    [0.5, 0.7, 0.5]])
        kps = extract(S, ExtractConfig(min_score=0.25, top_k=2))
        assert [(k.x, k.y) for k in kps] == [(15.0, 15.0), (5.0, 15.0)]
        assert len(extract(S, ExtractConfig(min_score=0.25))) == 3

    def test_sort_ties(self):
        kps = [Keypoint(3, 2, 0.5), Keypoint(1, 2, 0.5), Keypoint(0, 0, 0.9)]
        assert sort_keypoints(kps) == [Keypoint(0, 0, 0.9), Keypoint(1, 2, 0.5), Keypoint(3, 2, 0.5)]

    @pytest.mark.parametrize('kwargs', [{'nms_window': 4}, {'edge_ratio': 0.0},
                                        {'min_score': 1.5}, {'top_k': 0}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            ExtractConfig(**kwargs)

    def test_network_detector(self, texture):
        detector = NetworkDetector(build_model(seed=0), ExtractConfig(min_score=0.0))
        score = detector.score_map(texture)
        assert score.shape == texture.shape
        kps = detector.detect(texture, 10)
        assert len(kps) <= 10
        scores = [k.score for k in kps]
        assert scores == sorted(scores, reverse=True)
