"""The 8-layer convolutional classifier and its class activation maps.

The conv stack downsamples by exactly 16 in each spatial dimension (stride 2
at layers 2, 4, 6 and 8), global average pooling feeds a single linear head,
and the activation map for class c is the head row c contracted against the
last feature map, rectified, then peak-normalized to 1.
"""

from __future__ import annotations

import json
import struct
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DegenerateCamWarning, ShapeError, ValidationError
from .volumes import View

#: (out_channels, stride) per conv layer; strides multiply to the /16 factor.
ARCH_TABLE = ((32, 1), (32, 2), (64, 1), (64, 2), (128, 1), (128, 2), (256, 1), (256, 2))
DOWNSAMPLE_FACTOR = 16

_CKPT_MAGIC = b"MIPCAMCK"
_CKPT_VERSION = 1


class MipClassifier(nn.Module):
    """Conv stack -> GAP -> linear head; forward returns (logits, feature map)."""

    def __init__(self, input_shape: tuple[int, int], num_classes: int = 2,
                 channel_widths: tuple[int, ...] | None = None):
        super().__init__()
        h, w = (int(v) for v in input_shape)
        if h % DOWNSAMPLE_FACTOR or w % DOWNSAMPLE_FACTOR:
            raise ConfigError(
                f"input shape {(h, w)} must be divisible by {DOWNSAMPLE_FACTOR} in both dimensions"
            )
        widths = tuple(channel_widths) if channel_widths is not None else tuple(c for c, _ in ARCH_TABLE)
        if len(widths) != len(ARCH_TABLE):
            raise ConfigError(f"channel_widths must list {len(ARCH_TABLE)} layers, got {len(widths)}")
        self.input_shape = (h, w)
        self.num_classes = int(num_classes)
        self.channel_widths = widths
        layers: OrderedDict[str, nn.Module] = OrderedDict()
        in_ch = 1
        for i, ((_, stride), out_ch) in enumerate(zip(ARCH_TABLE, widths), start=1):
            layers[f"conv{i}"] = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1)
            layers[f"relu{i}"] = nn.ReLU()
            in_ch = out_ch
        self.features = nn.Sequential(layers)
        self.head = nn.Linear(in_ch, self.num_classes)
        # He fan-in init keeps activation scale constant through the plain
        # (normalization-free) ReLU stack; the default conv init attenuates it.
        for module in self.features:
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
                nn.init.zeros_(module.bias)

    @property
    def feature_shape(self) -> tuple[int, int]:
        return (self.input_shape[0] // DOWNSAMPLE_FACTOR, self.input_shape[1] // DOWNSAMPLE_FACTOR)

    @property
    def num_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self.features(x)
        logits = self.head(feats.mean(dim=(2, 3)))
        return logits, feats


def build_classifier(input_shape: tuple[int, int], num_classes: int = 2, seed: int = 0,
                     channel_widths: tuple[int, ...] | None = None) -> MipClassifier:
    """Build a classifier with deterministic seed-derived initialization."""
    torch.manual_seed(int(seed))
    return MipClassifier(input_shape, num_classes=num_classes, channel_widths=channel_widths)


def forward(model: MipClassifier, batch) -> tuple[torch.Tensor, torch.Tensor]:
    """Run a batch of MIP images; returns (logits [B, C], features [B, ch, h, w]).

    Accepts [B, H, W] or [B, 1, H, W] tensors/arrays; shapes must match the
    model's configured input shape.
    """
    x = torch.as_tensor(np.asarray(batch) if not torch.is_tensor(batch) else batch)
    if x.dim() == 3:
        x = x.unsqueeze(1)
    if x.dim() != 4 or x.shape[1] != 1 or tuple(x.shape[2:]) != model.input_shape:
        raise ShapeError(
            f"batch shape {tuple(x.shape)} does not match model input {model.input_shape}"
        )
    return model(x.to(next(model.parameters()).dtype))


def upsample_tensor(maps: torch.Tensor, target: tuple[int, int]) -> torch.Tensor:
    """Bilinear upsample [B, h, w] maps to ``target`` and re-peak-normalize.

    Interpolation alone lowers the peak (output samples sit between source
    pixel centres), so each map is rescaled back to max 1; all-zero maps pass
    through unchanged.
    """
    up = F.interpolate(maps.unsqueeze(1), size=target, mode="bilinear", align_corners=False)
    up = up.squeeze(1)
    peak = up.flatten(1).max(dim=1).values
    scale = peak.clamp_min(torch.finfo(up.dtype).tiny).view(-1, 1, 1)
    return torch.where((peak > 0).view(-1, 1, 1), up / scale, up)


@dataclass(frozen=True)
class CamMap:
    """A single activation map; peak is exactly 1 unless the map is degenerate."""

    data: np.ndarray
    class_index: int | None = None
    view: View | None = None
    degenerate: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeError(f"activation map must be 2D, got {data.ndim} dimensions")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.data.shape)


def compute_cam(features, class_weights, rectify: bool = True,
                class_index: int | None = None, view: View | str | None = None) -> CamMap:
    """Activation map for one feature map [C, h, w] and one head row [C].

    The raw map is the per-location dot product with the class weights,
    clamped below at zero when ``rectify`` is on, then divided by its maximum
    so the peak is exactly 1.  If nothing responds positively the map is all
    zeros and flagged degenerate (a warning is emitted).
    """
    f = features.detach().cpu().numpy() if torch.is_tensor(features) else np.asarray(features)
    w = class_weights.detach().cpu().numpy() if torch.is_tensor(class_weights) else np.asarray(class_weights)
    if f.ndim != 3:
        raise ShapeError(f"features must be [C, h, w], got shape {f.shape}")
    if w.ndim != 1 or w.shape[0] != f.shape[0]:
        raise ShapeError(f"class weights of length {w.shape} do not match {f.shape[0]} channels")
    raw = np.tensordot(w, f, axes=([0], [0]))
    if rectify:
        raw = np.maximum(raw, 0.0)
    peak = raw.max() if raw.size else 0.0
    view = View(view) if view is not None else None
    if peak <= 0:
        warnings.warn("activation map has no positive response; returning zeros",
                      DegenerateCamWarning, stacklevel=2)
        return CamMap(data=np.zeros_like(raw), class_index=class_index, view=view, degenerate=True)
    return CamMap(data=raw / peak, class_index=class_index, view=view)


def upsample_cam(cam: CamMap, target: tuple[int, int]) -> CamMap:
    """Upsample a coarse map to image resolution (exactly 16x the grid)."""
    h, w = cam.shape
    target = (int(target[0]), int(target[1]))
    if target != (h * DOWNSAMPLE_FACTOR, w * DOWNSAMPLE_FACTOR):
        raise ValidationError(
            f"target {target} must be {DOWNSAMPLE_FACTOR}x the map grid {(h, w)}"
        )
    maps = torch.from_numpy(np.ascontiguousarray(cam.data, dtype=np.float32)).unsqueeze(0)
    up = upsample_tensor(maps, target)[0].numpy()
    return CamMap(data=up, class_index=cam.class_index, view=cam.view, degenerate=cam.degenerate)


def save_checkpoint(model: MipClassifier, path, meta: dict | None = None) -> Path:
    """Serialize to a single file: versioned JSON header plus raw float32 blobs.

    The byte layout is fully deterministic, so identical models produce
    identical files; loading restores parameters bit-exactly.
    """
    path = Path(path)
    state = model.state_dict()
    tensors = []
    blobs = []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = {
        "version": _CKPT_VERSION,
        "arch": [{"out_channels": c, "stride": s} for c, s in ARCH_TABLE],
        "channel_widths": list(model.channel_widths),
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "tensors": tensors,
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path) -> tuple[MipClassifier, dict]:
    """Rebuild a model from :func:`save_checkpoint` output; returns (model, meta)."""
    raw = Path(path).read_bytes()
    if raw[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise ValidationError(f"{path}: not a mipcam checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, len(_CKPT_MAGIC))
    offset = len(_CKPT_MAGIC) + 4
    header = json.loads(raw[offset: offset + hlen].decode())
    if header.get("version") != _CKPT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {header.get('version')}")
    model = MipClassifier(tuple(header["input_shape"]), num_classes=header["num_classes"],
                          channel_widths=tuple(header["channel_widths"]))
    cursor = offset + hlen
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=cursor).reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32, copy=True))
        cursor += count * 4
    model.load_state_dict(state)
    return model, header.get("meta", {})
