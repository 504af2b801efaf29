"""
Score-map regressor: 4-level U-Net with a sigmoid head.

Encoder levels 1 -> 32 -> 64 -> 128 with 2x2 max pooling in between and a
128-channel bottleneck at 1/8 resolution. Each decoder stage upsamples
bilinearly, applies a 3x3 conv, concatenates the skip and runs a conv
block. A 1x1 conv and sigmoid give the score map.

Weight files:

    magic "NRKW" | u32 header length | JSON header | float32 LE blobs

The header holds the model config, its hash and, per tensor, its name,
shape and byte offset into the blob section.
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigMismatch, CorruptFile, ShapeError, Unimplemented
from ..utils.hashing import config_hash

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"NRKW"
_PREFIX = struct.Struct('<4sI')
VARIANTS = ('plain', 'dcn_encoder', 'dcn_decoder', 'dcn_all')


@dataclass
class ModelConfig:
    """Network dimensions and switches."""
    encoder_dims: List[int] = field(default_factory=lambda: [1, 32, 64, 128])
    decoder_dims: List[int] = field(default_factory=lambda: [128, 64, 32, 1])
    kernel_size: int = 3
    variant: str = 'plain'
    pad_input: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"model.variant must be one of {VARIANTS}, got '{self.variant}'")
        if len(self.encoder_dims) < 2 or len(self.decoder_dims) != len(self.encoder_dims):
            raise ValueError("model.decoder_dims must have as many entries as model.encoder_dims")
        if self.decoder_dims[0] != self.encoder_dims[-1]:
            raise ValueError("model.decoder_dims must start at the last encoder width")
        if self.kernel_size % 2 == 0:
            raise ValueError("model.kernel_size must be odd")

    @property
    def levels(self) -> int:
        return len(self.encoder_dims)

    @property
    def multiple(self) -> int:
        """Spatial dims must be divisible by this."""
        return 2 ** (self.levels - 1)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ConvBlock(nn.Sequential):
    """Two (conv, batch norm, ReLU) layers."""

    def __init__(self, in_ch: int, out_ch: int, k: int = 3):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, k, padding=k // 2, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, k, padding=k // 2, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )


class UpStage(nn.Module):
    """Bilinear x2 upsampling followed by conv, batch norm, ReLU."""

    def __init__(self, channels: int, k: int = 3):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(channels, channels, k, padding=k // 2, bias=False),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode='bilinear', align_corners=False)
        return self.conv(x)


class DetectorNet(nn.Module):
    """U-Net score-map regressor; input (N, 1, H, W) in [0, 1], output (N, 1, H, W) in (0, 1)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        enc, dec, k = cfg.encoder_dims, cfg.decoder_dims, cfg.kernel_size

        self.encoders = nn.ModuleList(
            [ConvBlock(enc[i], enc[i + 1], k) for i in range(len(enc) - 1)]
        )
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = ConvBlock(enc[-1], enc[-1], k)

        skips = enc[1:][::-1]
        outs = dec[1:-1] + [dec[-2]]
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        ch = enc[-1]
        for skip, out in zip(skips, outs):
            self.ups.append(UpStage(ch, k))
            self.decoders.append(ConvBlock(ch + skip, out, k))
            ch = out
        self.head = nn.Conv2d(ch, dec[-1], 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        m = self.cfg.multiple
        pad_h, pad_w = (-h) % m, (-w) % m
        if pad_h or pad_w:
            if not self.cfg.pad_input:
                raise ShapeError(f"Input {h}x{w} not divisible by {m} and padding is disabled")
            x = F.pad(x, (0, pad_w, 0, pad_h), mode='reflect')

        skips = []
        for block in self.encoders:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, block, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = block(torch.cat([up(x), skip], dim=1))
        x = torch.sigmoid(self.head(x))
        return x[..., :h, :w]


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_model(cfg: Optional[ModelConfig] = None, seed: int = 0) -> DetectorNet:
    """
    Construct the network with a deterministic initialisation under seed.

    Raises:
        Unimplemented: for deformable-convolution variants
    """
    cfg = cfg or ModelConfig()
    if cfg.variant != 'plain':
        raise Unimplemented(f"Model variant '{cfg.variant}' is reserved and not implemented")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = DetectorNet(cfg)
    logger.debug(f"Built DetectorNet with {count_parameters(model)} parameters")
    return model


def forward(model: DetectorNet, image: Union[np.ndarray, torch.Tensor]) -> torch.Tensor:
    """Run the network on (H, W), (1, H, W) or (N, 1, H, W) input; returns (N, 1, H, W)."""
    x = torch.as_tensor(image, dtype=torch.float32)
    while x.dim() < 4:
        x = x.unsqueeze(0)
    device = next(model.parameters()).device
    return model(x.to(device))


def predict_score_map(model: DetectorNet, image: np.ndarray) -> np.ndarray:
    """Inference-mode score map of an (H, W) image as float32 numpy."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = forward(model, image)[0, 0].cpu().numpy().astype(np.float32)
    model.train(was_training)
    return out


# =============================================================================
# Weight files
# =============================================================================

def save_weights(model: DetectorNet, path: Union[str, Path],
                 extra: Optional[Dict[str, Any]] = None) -> None:
    """Write parameters and buffers with the config header."""
    tensors = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        data = tensor.detach().cpu().numpy().astype('<f4')
        tensors.append({'name': name, 'shape': list(data.shape), 'offset': offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    cfg = model.cfg.to_dict()
    header = {
        'config': cfg,
        'config_hash': config_hash(cfg),
        'tensors': tensors,
        'extra': extra or {},
    }
    raw = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(_PREFIX.pack(WEIGHTS_MAGIC, len(raw)))
        f.write(raw)
        for blob in blobs:
            f.write(blob)


def read_weights_header(path: Union[str, Path]) -> Dict[str, Any]:
    header, _ = _read_weight_file(path)
    return header


def _read_weight_file(path: Union[str, Path]):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Weight file not found: {path}")
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise CorruptFile(f"{path} is shorter than its header")
    magic, size = _PREFIX.unpack_from(data)
    if magic != WEIGHTS_MAGIC:
        raise CorruptFile(f"{path} is not a weight file (magic {magic!r})")
    start = _PREFIX.size + size
    if len(data) < start:
        raise CorruptFile(f"{path} header truncated")
    try:
        header = json.loads(data[_PREFIX.size:start].decode('utf-8'))
        header['config'], header['tensors']
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise CorruptFile(f"{path} has a malformed header: {e}") from e
    if config_hash(header['config']) != header.get('config_hash'):
        raise CorruptFile(f"{path} config hash does not match its config")
    return header, memoryview(data)[start:]


def load_weights(path: Union[str, Path], cfg: Optional[ModelConfig] = None) -> DetectorNet:
    """
    Rebuild a model from a weight file.

    Args:
        path: weight file
        cfg: expected configuration; when given it must match the file

    Raises:
        ConfigMismatch: cfg differs from the stored configuration
        CorruptFile: truncated or malformed file
    """
    header, blobs = _read_weight_file(path)
    if cfg is not None and config_hash(cfg.to_dict()) != header['config_hash']:
        raise ConfigMismatch(
            f"{path} was written for config {header['config_hash']}, "
            f"expected {config_hash(cfg.to_dict())}"
        )
    try:
        stored_cfg = ModelConfig(**header['config'])
    except (TypeError, ValueError) as e:
        raise ConfigMismatch(f"{path} holds an unusable model config: {e}") from e

    model = build_model(stored_cfg)
    state = model.state_dict()
    entries = {t['name']: t for t in header['tensors']}
    if set(entries) != set(state):
        raise ConfigMismatch(f"{path} tensor names do not match the model")

    loaded = {}
    for name, ref in state.items():
        entry = entries[name]
        shape = tuple(entry['shape'])
        if shape != tuple(ref.shape):
            raise ConfigMismatch(f"{path}: tensor {name} has shape {shape}, model expects {tuple(ref.shape)}")
        count = int(np.prod(shape)) if shape else 1
        begin, end = entry['offset'], entry['offset'] + 4 * count
        if end > len(blobs):
            raise CorruptFile(f"{path} truncated inside tensor {name}")
        arr = np.frombuffer(blobs[begin:end], dtype='<f4').reshape(shape)
        loaded[name] = torch.from_numpy(arr.copy()).to(ref.dtype)
    model.load_state_dict(loaded)
    model.eval()
    return model
