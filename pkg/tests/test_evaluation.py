"""Tests for matching metrics, ground-truth loading and the benchmark runner."""

import json

import numpy as np
import pytest

from src.errors import DatasetFormatError, MetricsMismatch, NoSharedView
from src.evaluation import (
    CorrespondenceGroundTruth,
    EvalConfig,
    EvalPair,
    WarpGroundTruth,
    evaluate_pair,
    list_pairs,
    load_eval_pair,
    matching_metrics,
    repeatability,
    run_benchmark,
    verify_results,
)
from src.features import BuiltinPlugin, Keypoint, MatchSet
from src.geometry import Homography
from src.utils.conversions import write_gray

IDENTITY = WarpGroundTruth(Homography.identity(), (40, 40))


def matches(pairs):
    a, b = zip(*pairs)
    n = len(pairs)
    return MatchSet(np.array(a), np.array(b), np.zeros(n), np.zeros(n))


def shift(dx):
    return Homography(np.array([[1.0, 0, dx], [0, 1, 0], [0, 0, 1]]))


class TestMetrics:
    def test_one_wrong_match(self):
        kps = [Keypoint(5, 5), Keypoint(20, 20), Keypoint(30, 10)]
        m = matching_metrics(matches([(0, 0), (1, 1), (2, 0)]), kps, kps, IDENTITY)
        assert m.n_correct == 2
        assert m.mma == pytest.approx(2 / 3)
        assert m.ms == pytest.approx(2 / 3)
        possible = matching_metrics(matches([(0, 0), (1, 1), (2, 0)]), kps, kps, IDENTITY,
                                    definition='possible')
        assert possible.mma == pytest.approx(2 / 3)

    def test_single_correct_match(self):
        kps = [Keypoint(5 + 6 * i, 5) for i in range(5)]
        m = matching_metrics(matches([(2, 2)]), kps, kps, IDENTITY)
        assert m.ms == pytest.approx(0.2)
        assert m.mma == 1.0

    def test_no_matches(self):
        kps = [Keypoint(5, 5)]
        m = matching_metrics(MatchSet.empty(), kps, kps, IDENTITY)
        assert m.mma == 0.0 and m.mma_undefined

    def test_tolerance(self):
        gt = WarpGroundTruth(shift(2.5), (40, 40))
        kps_a, kps_b = [Keypoint(10, 10)], [Keypoint(12.5, 10)]
        ms = matching_metrics(matches([(0, 0)]), kps_a, [Keypoint(16, 10)], gt, tol=3.0)
        assert ms.n_correct == 0
        assert matching_metrics(matches([(0, 0)]), kps_a, kps_b, gt).n_correct == 1

    def test_repeatability_greedy(self):
        kps_a = [Keypoint(5, 5, 0.2), Keypoint(6, 5, 0.9)]
        kps_b = [Keypoint(5.5, 5)]
        assert repeatability(kps_a, kps_b, IDENTITY) == 1.0
        assert repeatability(kps_a, [Keypoint(30, 30)], IDENTITY) == 0.0

    def test_no_shared_view(self):
        gt = WarpGroundTruth(shift(100.0), (40, 40))
        with pytest.raises(NoSharedView):
            repeatability([Keypoint(5, 5)], [Keypoint(5, 5)], gt)

    def test_validity_masks_shared_view(self):
        valid_b = np.ones((40, 40), dtype=bool)
        valid_b[:, 20:] = False
        gt = WarpGroundTruth(Homography.identity(), (40, 40), valid_b=valid_b)
        kps = [Keypoint(5, 5), Keypoint(30, 5)]
        assert gt.shared_a(np.array([[5.0, 5.0], [30.0, 5.0]])).tolist() == [True, False]
        assert matching_metrics(matches([(0, 0)]), kps, kps[:1], gt).ms == 1.0


class TestGroundTruth:
    def test_correspondences(self):
        g = np.stack(np.meshgrid(np.arange(0, 41, 10.0), np.arange(0, 41, 10.0)), -1).reshape(-1, 2)
        gt = CorrespondenceGroundTruth(np.hstack([g, g + [1.0, 2.0]]), (41, 41), (43, 43))
        np.testing.assert_allclose(gt.forward([[12.5, 7.0]]), [[13.5, 9.0]])
        np.testing.assert_allclose(gt.backward([[13.5, 9.0]]), [[12.5, 7.0]])
        assert np.all(np.isnan(gt.forward([[60.0, 60.0]])))

    def test_load_pair_with_correspondences(self, tmp_path):
        write_gray(tmp_path / 'a.png', np.zeros((20, 20)))
        write_gray(tmp_path / 'b.png', np.zeros((20, 20)))
        rows = ['xa,ya,xb,yb', '0,0,0,0', '19,0,19,0', '0,19,0,19', '19,19,19,19']
        (tmp_path / 'corr.csv').write_text('\n'.join(rows) + '\n')
        pair = load_eval_pair(tmp_path)
        assert isinstance(pair.gt, CorrespondenceGroundTruth)
        np.testing.assert_allclose(pair.gt.forward([[4.0, 6.0]]), [[4.0, 6.0]])

    def test_pair_without_correspondence(self, tmp_path):
        write_gray(tmp_path / 'a.png', np.zeros((8, 8)))
        write_gray(tmp_path / 'b.png', np.zeros((8, 8)))
        with pytest.raises(DatasetFormatError):
            load_eval_pair(tmp_path)

    def test_missing_image(self, tmp_path):
        with pytest.raises(DatasetFormatError) as err:
            load_eval_pair(tmp_path)
        assert err.value.path.endswith('a.png')

    def test_empty_dataset(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            list_pairs(tmp_path)


class TestBenchmark:
    def test_identity_pairs_score_one(self, identity_pairs, tmp_path):
        plugin = BuiltinPlugin()
        report = run_benchmark(identity_pairs, plugin, plugin, EvalConfig(num_kpts=100),
                               out_dir=tmp_path / 'out')
        assert report.aggregate['rr'] == 1.0
        assert report.aggregate['ms'] == 1.0
        assert report.aggregate['mma'] == 1.0
        assert len(report.verified) == 1
        for name in ('pairs.csv', 'report.json'):
            assert (tmp_path / 'out' / name).exists()
        assert len(list((tmp_path / 'out' / 'viz').glob('*.png'))) == 3
        doc = json.loads((tmp_path / 'out' / 'report.json').read_text())
        assert doc['n_pairs'] == 3

    def test_parallel_matches_serial(self, identity_pairs):
        plugin = BuiltinPlugin()
        cfg = EvalConfig(num_kpts=50)
        serial = run_benchmark(identity_pairs, plugin, plugin, cfg)
        parallel = run_benchmark(identity_pairs, plugin, plugin, cfg, jobs=2)
        assert serial.pairs.equals(parallel.pairs)

    def test_no_shared_view_is_flagged(self, texture):
        pair = EvalPair('far', texture, texture, WarpGroundTruth(shift(500.0), texture.shape))
        result = evaluate_pair(pair, BuiltinPlugin(), BuiltinPlugin(), EvalConfig(num_kpts=20))
        assert result.no_shared_view
        assert (result.rr, result.ms, result.mma) == (0.0, 0.0, 0.0)

    def test_recount_detects_tampering(self, identity_pairs):
        plugin = BuiltinPlugin()
        cfg = EvalConfig(num_kpts=50, verify_fraction=1.0)
        pairs = {d.name: load_eval_pair(d) for d in list_pairs(identity_pairs)}
        results = [evaluate_pair(p, plugin, plugin, cfg) for p in pairs.values()]
        assert len(verify_results(results, pairs, cfg, np.random.default_rng(0))) == 3
        results[1].ms = 0.5
        with pytest.raises(MetricsMismatch):
            verify_results(results, pairs, cfg, np.random.default_rng(0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(mma_definition='strict')
