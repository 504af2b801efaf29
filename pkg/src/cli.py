"""
Command implementations behind nrkd.py.

Each cmd_* takes the parsed arguments and the merged RunConfig, does its
work and returns an exit code. Toolkit errors surface as one stderr line

    error: <ClassName>: <message>

with exit code 2.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .config import RunConfig, load_config
from .data.synth import (
    list_images,
    write_eval_dataset,
    write_retrieval_dataset,
    write_triplet_dataset,
)
from .errors import ConfigError, NrkdError
from .evaluation.benchmark import run_benchmark
from .evaluation.metrics import MMA_DEFINITIONS
from .extraction import NetworkDetector, extract
from .features import FeaturePlugin, resolve_plugin, write_keypoints_csv
from .heatmaps.builder import build_dataset_heatmaps
from .model.unet import build_model, load_weights
from .plotters import LossPlotter
from .retrieval.bovw import run_retrieval
from .training.dataset import HeatmapDataset
from .training.losses import LOSS_COMBINATIONS, ROW_ALIASES
from .training.trainer import train
from .utils.conversions import read_gray, write_gray
from .utils.logs import banner, setup_logging

logger = logging.getLogger('nrkd')

RUN_FILE = 'run.json'
EXIT_ERROR = 2


# =============================================================================
# Helpers
# =============================================================================

def _plain_args(args: argparse.Namespace) -> Dict[str, Any]:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key == 'handler':
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def write_run_record(out_dir: Path, args: argparse.Namespace, cfg: RunConfig) -> Path:
    """
    Record command, config hash, seed and version in <out_dir>/run.json.

    Commands sharing a directory (synth then build-gt) keep one entry each.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RUN_FILE
    records: Dict[str, Any] = {}
    if path.exists():
        try:
            with open(path, 'r') as f:
                records = json.load(f)
        except json.JSONDecodeError:
            logger.warning(f"Replacing unreadable {path}")
        if not isinstance(records, dict):
            records = {}
    records[args.command] = {
        'command': args.command,
        'config_hash': cfg.hash(),
        'seed': args.seed,
        'version': __version__,
        'args': _plain_args(args),
    }
    with open(path, 'w') as f:
        json.dump(records, f, indent=2, sort_keys=True)
    return path


def _plugin(value: str) -> FeaturePlugin:
    try:
        return resolve_plugin(value)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _detector(args: argparse.Namespace, cfg: RunConfig, plugin: FeaturePlugin):
    """Trained network (--weights) or the plugin's own detector (--detector plugin)."""
    if args.detector == 'plugin':
        return plugin
    if not args.weights:
        raise ConfigError(f"{args.command} needs --weights or --detector plugin")
    return NetworkDetector(load_weights(args.weights), cfg.extract)


def _input_images(path: Path) -> List[Path]:
    if path.is_dir():
        return list_images(path)
    if not path.exists():
        raise FileNotFoundError(f"Input image not found: {path}")
    return [path]


def _summary(title: str, items: Dict[str, Any]) -> None:
    banner(logger, title)
    for name, value in items.items():
        logger.info(f"  {name}: {value}")


# =============================================================================
# Commands
# =============================================================================

def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Training triplets, evaluation pairs or a retrieval gallery."""
    cfg = cfg.override('synth', count=args.count, height=args.height, width=args.width)
    cfg = cfg.override('warp', use_tps=False if args.homography_only else None)
    out = Path(args.out_dir)

    if args.kind == 'triplets':
        images = list_images(args.images) if args.images else None
        if args.images and not images:
            raise ConfigError(f"No images found under {args.images}")
        manifest = write_triplet_dataset(out, cfg.warp, cfg.photometric, cfg.synth,
                                         seed=args.seed, images=images, jobs=args.jobs)
        details = {'triplets': manifest['count'], 'config_hash': manifest['config_hash']}
    elif args.kind == 'eval':
        dirs = write_eval_dataset(out, cfg.synth.count, cfg.warp, cfg.photometric,
                                  cfg.synth.shape, seed=args.seed,
                                  max_retries=cfg.synth.max_retries)
        details = {'pairs': len(dirs)}
    else:
        gallery, queries = write_retrieval_dataset(out, cfg.synth.count, cfg.warp,
                                                   cfg.photometric, cfg.synth.shape,
                                                   seed=args.seed,
                                                   max_retries=cfg.synth.max_retries)
        details = {'gallery': gallery, 'query': queries}

    write_run_record(out, args, cfg)
    _summary(f"SYNTH ({args.kind}) COMPLETE", {'output': out, **details})
    return 0


def cmd_build_gt(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Matching heatmaps for every triplet of a dataset."""
    cfg = cfg.override('heatmap', weighting=args.weighting, max_keypoints=args.max_keypoints)
    plugin = _plugin(args.plugin)
    root = Path(args.dataset_dir)
    index = build_dataset_heatmaps(root, plugin, cfg.heatmap, jobs=args.jobs)
    write_run_record(root, args, cfg)
    _summary("GROUND TRUTH COMPLETE", {
        'plugin': plugin.name,
        'built': len(index['built']),
        'skipped': len(index['skipped']),
    })
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Train the detector network on built heatmaps."""
    cfg = cfg.override('train', max_steps=args.max_steps, epochs=args.epochs,
                       batch_size=args.batch_size, lr=args.lr, device=args.device,
                       siamese=False if args.single_branch else None, seed=args.seed)
    cfg = cfg.override('loss', combination=args.loss)
    out = Path(args.out_dir)

    dataset = HeatmapDataset(args.dataset_dir, min_peaks=cfg.train.min_peaks,
                             siamese=cfg.train.siamese, sigma=cfg.heatmap.sigma)
    model = build_model(cfg.model, seed=args.seed).to(cfg.train.device)
    result = train(dataset, model, cfg.train, cfg.loss, out)

    plot = None
    if len(result.metrics):
        plot = LossPlotter(style=cfg.style, output_dir=out).plot_and_save(
            'loss', subdirectory='plots', metrics=result.metrics)
    write_run_record(out, args, cfg)
    _summary("TRAINING COMPLETE", {
        'steps': len(result.metrics),
        'weights': out / 'weights.nrkw',
        'metrics': out / 'metrics.csv',
        'plot': plot,
    })
    return 0


def cmd_detect(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Score maps and keypoints for an image or a directory of images."""
    cfg = cfg.override('extract', top_k=args.top_k, min_score=args.min_score,
                       nms_window=args.nms_window, edge_ratio=args.edge_ratio,
                       subpixel=False if args.no_subpixel else None)
    detector = NetworkDetector(load_weights(args.weights), cfg.extract)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    images = _input_images(Path(args.input))
    total = 0
    for path in images:
        image = read_gray(path)
        score = detector.score_map(image)
        keypoints = extract(score, cfg.extract)
        write_keypoints_csv(out / f"{path.stem}.csv", keypoints)
        if args.save_score_map:
            write_gray(out / f"{path.stem}_score.png", score, bits=8)
        logger.debug(f"{path.name}: {len(keypoints)} keypoint(s)")
        total += len(keypoints)

    write_run_record(out, args, cfg)
    _summary("DETECTION COMPLETE", {'images': len(images), 'keypoints': total, 'output': out})
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    """RR / MS / MMA benchmark over a directory of pairs."""
    cfg = cfg.override('eval', num_kpts=args.num_kpts, tol=args.tol, ratio=args.ratio,
                       mutual=True if args.mutual else None,
                       mma_definition=args.mma_definition)
    plugin = _plugin(args.plugin)
    detector = _detector(args, cfg, plugin)
    out = Path(args.out_dir)
    report = run_benchmark(args.dataset_dir, detector, plugin, cfg.eval, out,
                           jobs=args.jobs, seed=args.seed, style=cfg.style)
    write_run_record(out, args, cfg)
    agg = report.aggregate
    _summary("EVALUATION COMPLETE", {
        'pairs': len(report.pairs),
        'RR': f"{agg['rr']:.4f}",
        'MS': f"{agg['ms']:.4f}",
        f"MMA@{cfg.eval.tol:g}": f"{agg['mma']:.4f}",
        'report': out / 'report.json',
    })
    return 0


def cmd_retrieve(args: argparse.Namespace, cfg: RunConfig) -> int:
    """Bag-of-visual-words retrieval of queries against a gallery."""
    cfg = cfg.override('retrieval', top_k=args.k, vocab_size=args.vocab_size,
                       num_kpts=args.num_kpts, idf=True if args.idf else None)
    plugin = _plugin(args.plugin)
    detector = _detector(args, cfg, plugin)
    out = Path(args.out_dir)
    summary = run_retrieval(args.gallery_dir, args.query_dir, detector, plugin,
                            cfg.retrieval, out, seed=args.seed)
    write_run_record(out, args, cfg)
    _summary("RETRIEVAL COMPLETE", {
        **{f"accuracy@{k}": f"{v:.4f}" for k, v in summary['accuracy'].items()},
        'queries': summary['n_queries'],
    })
    return 0


# =============================================================================
# Parser
# =============================================================================

def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, help='YAML config merged over config/default.yaml')
    common.add_argument('--seed', type=int, default=0, help='Master random seed (default: 0)')
    common.add_argument('--jobs', '-j', type=int, default=1, help='Worker processes (default: 1)')
    common.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    return common


def _feature_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--weights', '-w', type=str, help='Trained detector weights (.nrkw)')
    parser.add_argument('--detector', choices=['network', 'plugin'], default='network',
                        help="Keypoint source: trained network or the plugin's own detector")
    parser.add_argument('--plugin', '-p', type=str, default='builtin',
                        help="Descriptor plugin: 'builtin' or '<name>=<command-template>'")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog='nrkd',
        description='Non-rigid keypoint detector toolkit',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  Generate 50 training triplets and their heatmaps:
    nrkd synth data/train --count 50
    nrkd build-gt data/train

  Train, then benchmark on synthetic pairs:
    nrkd train data/train runs/exp1 --max-steps 500
    nrkd synth data/eval --kind eval --count 20
    nrkd eval data/eval runs/exp1/eval --weights runs/exp1/weights.nrkw
        """
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    p = sub.add_parser('synth', parents=[common], help='Generate a synthetic dataset')
    p.add_argument('out_dir', type=str)
    p.add_argument('--kind', choices=['triplets', 'eval', 'retrieval'], default='triplets')
    p.add_argument('--count', '-n', type=int, help='Number of triplets / pairs / objects')
    p.add_argument('--images', type=str, help='Directory of anchor images (default: synthetic)')
    p.add_argument('--height', type=int)
    p.add_argument('--width', type=int)
    p.add_argument('--homography-only', action='store_true', help='Disable the TPS component')
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser('build-gt', parents=[common], help='Build matching heatmaps')
    p.add_argument('dataset_dir', type=str)
    p.add_argument('--plugin', '-p', type=str, default='builtin',
                   help="Feature plugin: 'builtin' or '<name>=<command-template>'")
    p.add_argument('--weighting', choices=['graded', 'equal'])
    p.add_argument('--max-keypoints', type=int, help='Fixed keypoint budget per image')
    p.set_defaults(handler=cmd_build_gt)

    p = sub.add_parser('train', parents=[common], help='Train the detector')
    p.add_argument('dataset_dir', type=str)
    p.add_argument('out_dir', type=str)
    p.add_argument('--max-steps', type=int)
    p.add_argument('--epochs', type=int)
    p.add_argument('--batch-size', type=int)
    p.add_argument('--lr', type=float)
    p.add_argument('--device', type=str)
    p.add_argument('--single-branch', action='store_true', help='Train on view B only')
    p.add_argument('--loss', choices=sorted(LOSS_COMBINATIONS) + sorted(ROW_ALIASES),
                   help='Loss term combination')
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('detect', parents=[common], help='Detect keypoints with a trained model')
    p.add_argument('input', type=str, help='Image file or directory')
    p.add_argument('out_dir', type=str)
    p.add_argument('--weights', '-w', type=str, required=True)
    p.add_argument('--top-k', type=int)
    p.add_argument('--min-score', type=float)
    p.add_argument('--nms-window', type=int)
    p.add_argument('--edge-ratio', type=float)
    p.add_argument('--no-subpixel', action='store_true')
    p.add_argument('--save-score-map', action='store_true', help='Also write <name>_score.png')
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser('eval', parents=[common], help='Benchmark RR / MS / MMA')
    p.add_argument('dataset_dir', type=str)
    p.add_argument('out_dir', type=str)
    _feature_args(p)
    p.add_argument('--num-kpts', type=int, help='Keypoint budget (default: 1024)')
    p.add_argument('--tol', type=float, help='Correctness threshold in pixels (default: 3)')
    p.add_argument('--ratio', type=float)
    p.add_argument('--mutual', action='store_true')
    p.add_argument('--mma-definition', choices=list(MMA_DEFINITIONS))
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('retrieve', parents=[common], help='Bag-of-visual-words retrieval')
    p.add_argument('gallery_dir', type=str)
    p.add_argument('query_dir', type=str)
    p.add_argument('out_dir', type=str)
    _feature_args(p)
    p.add_argument('--k', type=int, help='Report accuracy@1..k (default: 5)')
    p.add_argument('--vocab-size', type=int)
    p.add_argument('--num-kpts', type=int)
    p.add_argument('--idf', action='store_true')
    p.set_defaults(handler=cmd_retrieve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config)
        return args.handler(args, cfg)
    except (NrkdError, FileNotFoundError) as e:
        message = ' '.join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return EXIT_ERROR
