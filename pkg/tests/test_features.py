"""Tests for builtin features, external plugins, exchange files and ratio matching."""

import shlex
import sys
import textwrap

import numpy as np
import pytest

from src.errors import CorruptFile, PluginProtocolError, PluginTimeout
from src.features import (
    BuiltinPlugin,
    DescriptorSet,
    ExternalPlugin,
    Keypoint,
    PluginSpec,
    describe_builtin,
    detect_builtin,
    keypoint_budget,
    match_ratio,
    parse_plugin_arg,
    read_descriptors,
    read_keypoints_csv,
    resolve_plugin,
    run_external_plugin,
    write_descriptors,
    write_keypoints_csv,
)
from src.utils.conversions import write_gray

PLUGIN_SCRIPT = textwrap.dedent('''
    import struct
    import sys
    import time

    mode, image, k, kp_path, desc_path = sys.argv[1:6]
    if mode == 'fail':
        sys.stderr.write('boom\\n')
        sys.exit(3)
    if mode == 'sleep':
        time.sleep(10)
    points = [(5.0, 6.0, 0.9), (10.5, 12.25, 0.5), (20.0, 8.0, 0.7)]
    if mode == 'oob':
        points[0] = (500.0, 6.0, 0.9)
    scale = 2.0 if mode == 'unnormalized' else 1.0
    with open(kp_path, 'w') as f:
        f.write('x,y,score\\n')
        for x, y, s in points:
            f.write(f'{x:.6f},{y:.6f},{s:.6f}\\n')
    if mode == 'no-descriptors':
        sys.exit(0)
    with open(desc_path, 'wb') as f:
        f.write(struct.pack('<4sII', b'NRKD', len(points), 2))
        for i in range(len(points)):
            f.write(struct.pack('<2f', scale * (i % 2), scale * (1 - i % 2)))
''')


@pytest.fixture
def plugin_factory(tmp_path, monkeypatch):
    monkeypatch.setenv('NRKD_CACHE', str(tmp_path / 'cache'))
    script = tmp_path / 'plugin.py'
    script.write_text(PLUGIN_SCRIPT)

    def make(mode='ok', timeout=60.0):
        command = (f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {mode} "
                   "{image} {k} {keypoints} {descriptors}")
        return PluginSpec(name=f'fake-{mode}', kind='external', command=command, timeout=timeout)
    return make


@pytest.fixture
def small_image(tmp_path):
    path = tmp_path / 'small.png'
    write_gray(path, np.full((32, 32), 0.5))
    return path


def unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_keypoint_budget():
    assert keypoint_budget((300, 400)) == 2400
    assert keypoint_budget((10, 10), 0.001) == 1


class TestDescriptorSet:
    def test_rejects_non_unit_rows(self):
        with pytest.raises(ValueError):
            DescriptorSet([Keypoint(0, 0)], np.array([[2.0, 0.0]]))

    def test_rejects_row_mismatch(self):
        with pytest.raises(ValueError):
            DescriptorSet([Keypoint(0, 0)], np.eye(2))

    def test_empty(self):
        d = DescriptorSet.empty(8)
        assert len(d) == 0
        assert d.dim == 8
        assert d.points.shape == (0, 2)


class TestBuiltin:
    def test_flat_image_has_no_keypoints(self):
        assert detect_builtin(np.full((40, 40), 0.5), 10) == []

    def test_budget_and_order(self, texture):
        kps = detect_builtin(texture, 25)
        assert 0 < len(kps) <= 25
        scores = [k.score for k in kps]
        assert scores == sorted(scores, reverse=True)
        for k in kps:
            assert k.x == int(k.x) and 0 <= k.x < 96
            assert 0 <= k.y < 96

    def test_invalid_budget(self, texture):
        with pytest.raises(ValueError):
            detect_builtin(texture, 0)

    def test_descriptors_are_unit_norm(self, texture):
        kps = detect_builtin(texture, 50)
        desc = describe_builtin(texture, kps)
        assert desc.dim == 256
        np.testing.assert_allclose(np.linalg.norm(desc.vectors, axis=1), 1.0, atol=1e-5)
        assert len(desc) + len(desc.dropped) == len(kps)

    def test_border_and_flat_keypoints_dropped(self, texture):
        image = texture.copy()
        image[:, 60:] = 0.5
        kps = [Keypoint(2, 40), Keypoint(40, 40), Keypoint(80, 40), Keypoint(93, 93)]
        desc = describe_builtin(image, kps)
        assert desc.dropped == [0, 2, 3]
        assert desc.keypoints == [Keypoint(40, 40)]

    def test_all_dropped(self, texture):
        desc = describe_builtin(texture, [Keypoint(0, 0)])
        assert len(desc) == 0
        assert desc.dropped == [0]

    def test_invariant_to_affine_intensity(self, texture):
        kps = [Keypoint(30, 30), Keypoint(50, 60)]
        a = describe_builtin(texture, kps)
        b = describe_builtin(0.5 * texture + 0.2, kps)
        np.testing.assert_allclose(a.vectors, b.vectors, atol=1e-5)

    def test_detect_and_describe(self, texture):
        desc = BuiltinPlugin().detect_and_describe(texture, 20)
        assert 0 < len(desc) <= 20


class TestPluginArg:
    def test_builtin(self):
        assert parse_plugin_arg('builtin').kind == 'builtin'
        assert isinstance(resolve_plugin(None), BuiltinPlugin)
        assert isinstance(resolve_plugin('builtin'), BuiltinPlugin)

    def test_external(self):
        spec = parse_plugin_arg('sift=run-sift {image} {keypoints}')
        assert spec.name == 'sift'
        assert spec.kind == 'external'
        assert spec.command == 'run-sift {image} {keypoints}'
        assert isinstance(resolve_plugin(spec), ExternalPlugin)

    @pytest.mark.parametrize('value', ['sift', '=cmd', 'sift='])
    def test_malformed(self, value):
        with pytest.raises(ValueError):
            parse_plugin_arg(value)

    def test_external_needs_command(self):
        with pytest.raises(ValueError):
            PluginSpec(name='x', kind='external')


class TestExternalPlugin:
    def test_reads_exchange_files(self, plugin_factory, small_image):
        kps, desc = run_external_plugin(plugin_factory(), small_image, 10)
        assert [(k.x, k.y) for k in kps] == [(5.0, 6.0), (10.5, 12.25), (20.0, 8.0)]
        np.testing.assert_allclose(desc.vectors, [[0, 1], [1, 0], [0, 1]])

    def test_non_zero_exit(self, plugin_factory, small_image):
        with pytest.raises(PluginProtocolError, match='code 3: boom'):
            run_external_plugin(plugin_factory('fail'), small_image, 10)

    def test_out_of_bounds(self, plugin_factory, small_image):
        with pytest.raises(PluginProtocolError, match='outside'):
            run_external_plugin(plugin_factory('oob'), small_image, 10)

    def test_missing_output(self, plugin_factory, small_image):
        with pytest.raises(PluginProtocolError, match='descriptors.bin'):
            run_external_plugin(plugin_factory('no-descriptors'), small_image, 10)

    def test_timeout(self, plugin_factory, small_image):
        with pytest.raises(PluginTimeout):
            run_external_plugin(plugin_factory('sleep', timeout=0.5), small_image, 10)

    def test_renormalises(self, plugin_factory, small_image):
        _, desc = run_external_plugin(plugin_factory('unnormalized'), small_image, 10)
        np.testing.assert_allclose(np.linalg.norm(desc.vectors, axis=1), 1.0, atol=1e-6)

    def test_keeps_top_k(self, plugin_factory):
        plugin = ExternalPlugin(plugin_factory())
        desc = plugin.detect_and_describe(np.full((32, 32), 0.5), 2)
        assert [k.score for k in desc.keypoints] == [0.9, 0.7]

    def test_describe_records_dropped(self, plugin_factory):
        plugin = ExternalPlugin(plugin_factory())
        desc = plugin.describe(np.full((32, 32), 0.5), [Keypoint(5, 6), Keypoint(1, 1)])
        assert desc.dropped == [1]

    def test_work_directories_removed(self, plugin_factory, small_image, tmp_path):
        plugin = ExternalPlugin(plugin_factory())
        plugin.detect_and_describe(np.full((32, 32), 0.5), 2)
        run_external_plugin(plugin_factory(), small_image, 10)
        with pytest.raises(PluginProtocolError):
            run_external_plugin(plugin_factory('fail'), small_image, 10)
        assert list((tmp_path / 'cache').iterdir()) == []

    def test_work_directories_kept_on_request(self, plugin_factory, small_image, tmp_path,
                                              monkeypatch):
        monkeypatch.setenv('NRKD_KEEP_PLUGIN_DIRS', '1')
        run_external_plugin(plugin_factory(), small_image, 10)
        kept = list((tmp_path / 'cache').iterdir())
        assert len(kept) == 1
        assert (kept[0] / 'keypoints.csv').exists()

    def test_bad_template(self, tmp_path, small_image):
        spec = PluginSpec(name='bad', kind='external', command='run {nope}')
        with pytest.raises(PluginProtocolError):
            run_external_plugin(spec, small_image, 5, workdir=tmp_path / 'w')


class TestExchange:
    def test_keypoint_csv(self, tmp_path):
        kps = [Keypoint(1.25, 2.5, 0.125), Keypoint(3.0, 4.0, 1.0)]
        write_keypoints_csv(tmp_path / 'k.csv', kps)
        assert (tmp_path / 'k.csv').read_text().splitlines()[0] == 'x,y,score'
        assert read_keypoints_csv(tmp_path / 'k.csv') == kps

    def test_empty_keypoint_csv(self, tmp_path):
        write_keypoints_csv(tmp_path / 'k.csv', [])
        assert read_keypoints_csv(tmp_path / 'k.csv') == []

    def test_bad_header(self, tmp_path):
        (tmp_path / 'k.csv').write_text('u,v\n1,2\n')
        with pytest.raises(CorruptFile):
            read_keypoints_csv(tmp_path / 'k.csv')

    def test_non_numeric(self, tmp_path):
        (tmp_path / 'k.csv').write_text('x,y,score\n1,two,3\n')
        with pytest.raises(CorruptFile):
            read_keypoints_csv(tmp_path / 'k.csv')

    def test_descriptors(self, tmp_path, rng):
        v = unit_rows(rng, 7, 16).astype(np.float32)
        write_descriptors(tmp_path / 'd.bin', v)
        assert (tmp_path / 'd.bin').stat().st_size == 12 + 7 * 16 * 4
        np.testing.assert_array_equal(read_descriptors(tmp_path / 'd.bin'), v)

    def test_bad_magic(self, tmp_path):
        write_descriptors(tmp_path / 'd.bin', np.eye(2))
        data = bytearray((tmp_path / 'd.bin').read_bytes())
        data[:4] = b'XXXX'
        (tmp_path / 'd.bin').write_bytes(bytes(data))
        with pytest.raises(CorruptFile):
            read_descriptors(tmp_path / 'd.bin')

    def test_truncated(self, tmp_path):
        write_descriptors(tmp_path / 'd.bin', np.eye(3))
        (tmp_path / 'd.bin').write_bytes((tmp_path / 'd.bin').read_bytes()[:-4])
        with pytest.raises(CorruptFile):
            read_descriptors(tmp_path / 'd.bin')


class TestMatchRatio:
    def test_identical_sets_match_diagonal(self):
        m = match_ratio(np.eye(3), np.eye(3))
        np.testing.assert_array_equal(m.index_a, [0, 1, 2])
        np.testing.assert_array_equal(m.index_b, [0, 1, 2])
        np.testing.assert_array_equal(m.ratio, 0.0)

    def test_single_candidate_passes(self):
        m = match_ratio(np.eye(2), np.array([[1.0, 0.0]]))
        np.testing.assert_array_equal(m.index_a, [0, 1])
        np.testing.assert_array_equal(m.ratio, [0.0, 0.0])

    def test_equal_distances_rejected(self):
        db = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert len(match_ratio(np.array([[1.0, 0.0], [0.0, 1.0]]), db, ratio=1.0)) == 0

    def test_mutual(self):
        a1 = np.array([0.95, 0.05]) / np.linalg.norm([0.95, 0.05])
        da = np.stack([[1.0, 0.0], a1])
        db = np.eye(2)
        assert list(match_ratio(da, db).index_a) == [0, 1]
        m = match_ratio(da, db, mutual=True)
        assert list(m.index_a) == [0]

    def test_empty(self):
        assert len(match_ratio(np.zeros((0, 4)), np.eye(4))) == 0
        assert len(match_ratio(np.eye(4), np.zeros((0, 4)))) == 0

    def test_validation(self):
        with pytest.raises(ValueError):
            match_ratio(np.eye(2), np.eye(3))
        with pytest.raises(ValueError):
            match_ratio(np.eye(2), np.eye(2), ratio=0.0)

    def test_brute_force(self, rng):
        da, db = unit_rows(rng, 40, 8), unit_rows(rng, 30, 8)
        m = match_ratio(da, db, ratio=0.9)
        expected = []
        for i, row in enumerate(da):
            d = np.linalg.norm(db - row, axis=1)
            j, k = np.argsort(d)[:2]
            if d[j] / d[k] < 0.9:
                expected.append((i, j))
        assert list(zip(m.index_a.tolist(), m.index_b.tolist())) == expected
        assert len(set(m.index_a.tolist())) == len(m)
