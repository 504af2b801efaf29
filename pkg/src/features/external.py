"""
External detector/descriptor plugins driven through the exchange format.

A plugin is a command template. Before invocation the placeholders are
substituted:

    {image}         input image path (PNG)
    {k}             keypoint budget
    {keypoints}     path the plugin must write its keypoint CSV to
    {descriptors}   path the plugin must write its descriptor binary to
    {keypoints_in}  keypoints to describe (describe-only calls), else empty
    {request}       request.json holding all of the above

Each invocation runs in its own working directory under $NRKD_CACHE
(or the system temp dir).
"""

import json
import logging
import os
import shlex
import shutil
import subprocess
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import imageio.v2 as imageio
import numpy as np

from ..errors import CorruptFile, PluginProtocolError, PluginTimeout
from ..utils.conversions import write_gray
from .base import FeaturePlugin, PluginSpec
from .builtin import BuiltinPlugin
from .exchange import read_descriptors, read_keypoints_csv, write_keypoints_csv
from .types import DescriptorSet, Keypoint

logger = logging.getLogger(__name__)

CACHE_ENV = 'NRKD_CACHE'
KEEP_ENV = 'NRKD_KEEP_PLUGIN_DIRS'


def parse_plugin_arg(value: str) -> PluginSpec:
    """
    Parse a `--plugin` value: `builtin` or `<name>=<command-template>`.
    """
    value = value.strip()
    if value == 'builtin':
        return PluginSpec()
    name, sep, command = value.partition('=')
    if not sep or not name.strip() or not command.strip():
        raise ValueError(f"Plugin must be 'builtin' or '<name>=<command>', got '{value}'")
    return PluginSpec(name=name.strip(), kind='external', command=command.strip())


@contextmanager
def plugin_workdir() -> Iterator[Path]:
    """
    Fresh per-invocation directory under $NRKD_CACHE or the temp dir.

    Removed on exit unless $NRKD_KEEP_PLUGIN_DIRS is set to a non-empty value.
    """
    root = os.environ.get(CACHE_ENV)
    if root:
        Path(root).mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix='nrkd-plugin-', dir=root or None))
    try:
        yield work
    finally:
        if os.environ.get(KEEP_ENV):
            logger.debug(f"Keeping plugin directory {work}")
        else:
            shutil.rmtree(work, ignore_errors=True)


def _image_shape(image_path: Path) -> Tuple[int, int]:
    img = imageio.imread(image_path)
    return img.shape[0], img.shape[1]


def _validate_keypoints(keypoints: List[Keypoint], shape: Tuple[int, int], name: str) -> None:
    h, w = shape
    for i, kp in enumerate(keypoints):
        if not (0 <= kp.x < w and 0 <= kp.y < h):
            raise PluginProtocolError(
                f"Plugin '{name}' returned keypoint {i} at ({kp.x}, {kp.y}) "
                f"outside the {w}x{h} image"
            )


def _normalise_rows(vectors: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(vectors)):
        raise PluginProtocolError(f"Plugin '{name}' returned non-finite descriptors")
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    if np.any(norms == 0):
        raise PluginProtocolError(f"Plugin '{name}' returned zero-norm descriptor rows")
    off = np.abs(norms - 1.0) > 1e-5
    if np.any(off):
        logger.warning(f"Plugin '{name}': renormalising {int(off.sum())} descriptor row(s)")
        vectors = (vectors / norms[:, None]).astype(np.float32)
    return vectors


def _dropped_indices(requested: Sequence[Keypoint], returned: Sequence[Keypoint]) -> List[int]:
    kept = {(round(k.x, 4), round(k.y, 4)) for k in returned}
    return [i for i, k in enumerate(requested) if (round(k.x, 4), round(k.y, 4)) not in kept]


def run_external_plugin(spec: PluginSpec, image_path: Union[str, Path], k: int,
                        keypoints: Optional[Sequence[Keypoint]] = None,
                        workdir: Optional[Path] = None) -> Tuple[List[Keypoint], DescriptorSet]:
    """
    Invoke an external plugin on one image and parse its exchange files.

    Args:
        spec: external plugin spec
        image_path: image to process
        k: keypoint budget
        keypoints: when given, the plugin is asked to describe these instead
            of detecting its own
        workdir: invocation directory, kept by the caller (a fresh temporary
            one, removed afterwards, when None)

    Returns:
        (keypoints, descriptors)

    Raises:
        PluginTimeout: the command ran past spec.timeout seconds
        PluginProtocolError: non-zero exit, missing or malformed output,
            out-of-bounds keypoints
    """
    if spec.kind != 'external':
        raise ValueError(f"Plugin '{spec.name}' is not external")
    image_path = Path(image_path)
    if workdir is None:
        with plugin_workdir() as work:
            return _invoke(spec, image_path, k, keypoints, work)
    work = Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    return _invoke(spec, image_path, k, keypoints, work)


def _invoke(spec: PluginSpec, image_path: Path, k: int,
            keypoints: Optional[Sequence[Keypoint]],
            work: Path) -> Tuple[List[Keypoint], DescriptorSet]:
    paths = {
        'image': str(image_path),
        'k': int(k),
        'keypoints': str(work / 'keypoints.csv'),
        'descriptors': str(work / 'descriptors.bin'),
        'keypoints_in': '',
        'request': str(work / 'request.json'),
    }
    if keypoints is not None:
        paths['keypoints_in'] = str(work / 'keypoints_in.csv')
        write_keypoints_csv(paths['keypoints_in'], keypoints)
    with open(paths['request'], 'w') as f:
        json.dump(paths, f, indent=2)

    try:
        args = shlex.split(spec.command.format(**paths))
    except (KeyError, IndexError, ValueError) as e:
        raise PluginProtocolError(f"Bad command template for plugin '{spec.name}': {e}") from e
    logger.debug(f"Running plugin '{spec.name}': {args}")

    try:
        proc = subprocess.run(args, cwd=work, capture_output=True, text=True,
                              timeout=spec.timeout)
    except subprocess.TimeoutExpired as e:
        raise PluginTimeout(f"Plugin '{spec.name}' exceeded {spec.timeout:g} s") from e
    except OSError as e:
        raise PluginProtocolError(f"Plugin '{spec.name}' could not start: {e}") from e
    if proc.returncode != 0:
        tail = proc.stderr.strip().splitlines()[-1:] or ['']
        raise PluginProtocolError(
            f"Plugin '{spec.name}' exited with code {proc.returncode}: {tail[0]}"
        )

    for key in ('keypoints', 'descriptors'):
        if not Path(paths[key]).exists():
            raise PluginProtocolError(f"Plugin '{spec.name}' did not write {Path(paths[key]).name}")
    try:
        kps = read_keypoints_csv(paths['keypoints'])
        vectors = read_descriptors(paths['descriptors'])
    except CorruptFile as e:
        raise PluginProtocolError(f"Plugin '{spec.name}': {e}") from e

    if len(vectors) != len(kps):
        raise PluginProtocolError(
            f"Plugin '{spec.name}' returned {len(kps)} keypoints but {len(vectors)} descriptors"
        )
    _validate_keypoints(kps, _image_shape(image_path), spec.name)
    if len(vectors):
        vectors = _normalise_rows(vectors, spec.name)

    dropped = _dropped_indices(keypoints, kps) if keypoints is not None else []
    return kps, DescriptorSet(kps, vectors, dropped)


class ExternalPlugin(FeaturePlugin):
    """FeaturePlugin wrapper around an external command."""

    def __init__(self, spec: PluginSpec):
        if spec.kind != 'external':
            raise ValueError(f"Plugin '{spec.name}' is not external")
        self.spec = spec
        self.name = spec.name

    def _stage_image(self, image: np.ndarray, work: Path) -> Path:
        path = work / 'image.png'
        write_gray(path, image, bits=16)
        return path

    def detect(self, image: np.ndarray, k: int) -> List[Keypoint]:
        return self.detect_and_describe(image, k).keypoints

    def describe(self, image: np.ndarray, keypoints: Sequence[Keypoint]) -> DescriptorSet:
        with plugin_workdir() as work:
            path = self._stage_image(image, work)
            _, descriptors = run_external_plugin(self.spec, path, max(len(keypoints), 1),
                                                 keypoints=list(keypoints), workdir=work)
        return descriptors

    def detect_and_describe(self, image: np.ndarray, k: int) -> DescriptorSet:
        with plugin_workdir() as work:
            path = self._stage_image(image, work)
            kps, descriptors = run_external_plugin(self.spec, path, k, workdir=work)
        if len(kps) > k:
            order = np.argsort([-kp.score for kp in kps], kind='stable')[:k]
            descriptors = DescriptorSet([kps[i] for i in order], descriptors.vectors[order])
        return descriptors


def resolve_plugin(spec: Union[PluginSpec, str, None]) -> FeaturePlugin:
    """PluginSpec (or `--plugin` string) to a FeaturePlugin instance."""
    if spec is None:
        return BuiltinPlugin()
    if isinstance(spec, str):
        spec = parse_plugin_arg(spec)
    if spec.kind == 'builtin':
        return BuiltinPlugin()
    return ExternalPlugin(spec)
