"""Training losses: classification cross-entropy plus the CAM-to-center distance.

The distance loss is the activation-mass-weighted mean Euclidean distance to
the annotated tumor centre, normalized by the image diagonal so it lives in
[0, 1].  Mass normalization makes it invariant to positive rescaling of the
map, so it cannot be gamed by shrinking activation magnitude.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DegenerateCamWarning, NumericError, ValidationError
from .model import CamMap
from .volumes import Point2D

#: Distance loss value assigned to a map with no positive response.
DEGENERATE_PENALTY = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step loss record; ``combined`` is always classification + weight * distance."""

    classification: float
    distance: float
    weight: float
    combined: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.weight < 0:
            raise ValidationError(f"loss weight must be >= 0, got {self.weight}")
        combined = self.combined
        if combined is None:
            combined = self.classification + self.weight * self.distance
        for name, value in (("classification", self.classification), ("distance", self.distance),
                            ("combined", combined)):
            if not math.isfinite(value):
                raise NumericError(f"{name} loss is not finite: {value}")
        object.__setattr__(self, "combined", float(combined))

    def to_record(self) -> dict:
        return {
            "loss1": self.classification,
            "loss2": self.distance,
            "lambda": self.weight,
            "combined": self.combined,
        }


def classification_loss(logits, labels) -> torch.Tensor:
    """Mean two-class cross-entropy between softmax probabilities and labels."""
    logits = torch.as_tensor(np.asarray(logits)) if not torch.is_tensor(logits) else logits
    labels = torch.as_tensor(np.asarray(labels)) if not torch.is_tensor(labels) else labels
    labels = labels.long()
    if logits.dim() != 2 or logits.shape[0] != labels.shape[0]:
        raise ValidationError(f"logits {tuple(logits.shape)} do not match labels {tuple(labels.shape)}")
    if not bool(((labels == 0) | (labels == 1)).all()):
        raise ValidationError("labels must be 0 or 1")
    if not bool(torch.isfinite(logits).all()):
        raise NumericError("logits contain non-finite values")
    return F.cross_entropy(logits, labels)


def distance_map(shape: tuple[int, int], center: tuple[int, int]) -> np.ndarray:
    """Euclidean pixel distance to ``center``, divided by the image diagonal."""
    h, w = (int(v) for v in shape)
    diag = math.hypot(h - 1, w - 1)
    if diag == 0:
        raise ValidationError(f"distance map undefined on a single-pixel grid {shape}")
    u0, v0 = (int(c) for c in center)
    uu, vv = np.ogrid[:h, :w]
    return np.hypot(uu - u0, vv - v0) / diag


def distance_loss(cam, center: Point2D | tuple[int, int]) -> float:
    """Mass-weighted mean normalized distance from map activation to the centre.

    ``cam`` is an image-resolution map (CamMap or array) with non-negative
    values; an all-zero map gets the maximum penalty 1.0 and a warning.
    """
    m = cam.data if isinstance(cam, CamMap) else np.asarray(cam)
    if m.ndim != 2:
        raise ValidationError(f"expected a 2D map, got shape {m.shape}")
    if m.size and float(m.min()) < 0:
        raise ValidationError("distance loss requires non-negative activation values")
    h, w = m.shape
    u0, v0 = int(center[0]), int(center[1])
    if not (0 <= u0 < h and 0 <= v0 < w):
        raise ValidationError(f"center {(u0, v0)} outside map grid {(h, w)}")
    total = float(m.sum())
    if total == 0.0:
        warnings.warn("all-zero activation map; assigning maximum distance penalty",
                      DegenerateCamWarning, stacklevel=2)
        return DEGENERATE_PENALTY
    return float((m * distance_map((h, w), (u0, v0))).sum() / total)


def distance_loss_tensor(maps: torch.Tensor, dist_maps: torch.Tensor,
                         valid: torch.Tensor) -> torch.Tensor:
    """Differentiable batched distance loss.

    ``maps`` [B, H, W] are non-negative image-resolution activation maps,
    ``dist_maps`` the matching normalized distance maps, ``valid`` marks rows
    with positive mass; invalid rows contribute the constant penalty.
    """
    num = (maps * dist_maps).flatten(1).sum(dim=1)
    den = maps.flatten(1).sum(dim=1)
    per_sample = num / den.clamp_min(torch.finfo(maps.dtype).tiny)
    penalty = torch.full_like(per_sample, DEGENERATE_PENALTY)
    return torch.where(valid, per_sample, penalty)


def training_distance_loss(feats: torch.Tensor, class_weights: torch.Tensor,
                           dist_maps: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Distance loss as optimized during training, per sample.

    The activation mass is softplus(raw response) rather than the hard
    rectification used for the reported maps: a hard clamp gates gradients off
    wherever the response has been pushed negative, which in practice ratchets
    the whole map into the zero-mass fixed point (training collapse).
    Softplus mass keeps the same mass-weighted expected-distance objective
    (identical wherever responses are decisively positive) with gradients
    everywhere.  Returns (per-sample loss, per-sample flag marking samples
    whose hard-rectified map would be all zero).
    """
    raw = torch.einsum("bchw,bc->bhw", feats, class_weights)
    hard_degenerate = raw.flatten(1).max(dim=1).values <= 0
    mass = F.softplus(raw)
    target = tuple(dist_maps.shape[1:])
    up = F.interpolate(mass.unsqueeze(1), size=target, mode="bilinear", align_corners=False)
    up = up.squeeze(1)
    valid = torch.ones_like(hard_degenerate)
    return distance_loss_tensor(up, dist_maps, valid), hard_degenerate


def combined_loss(classification, distance, weight: float):
    """Weighted sum ``classification + weight * distance`` (floats or tensors)."""
    if weight < 0:
        raise ValidationError(f"loss weight must be >= 0, got {weight}")
    return classification + weight * distance
