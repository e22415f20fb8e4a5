"""End-to-end case evaluation: MIPs -> activation maps -> masks -> 3D Dice."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from ..errors import ValidationError
from ..localization import BinaryMask2D, BinaryMask3D, backproject, cam_to_mask, dice, refine_mask
from ..model import CamMap, MipClassifier, compute_cam, upsample_cam
from ..volumes import PetVolume, normalize_suv, resample_volume
from .config import TrainConfig
from .data import VIEWS, PreparedCase


@dataclass(frozen=True)
class CasePrediction:
    """Everything the localizer produces for one case."""

    pred_label: int
    probabilities: tuple[float, float]
    cams: tuple[CamMap, CamMap]  # image resolution, [coronal, sagittal]
    masks2d: tuple[BinaryMask2D, BinaryMask2D]
    mask3d: BinaryMask3D

    @property
    def degenerate(self) -> bool:
        return any(c.degenerate for c in self.cams)


@dataclass(frozen=True)
class CaseRecord:
    """One evaluation row; serialized verbatim into records.jsonl."""

    case_id: str
    fold: int
    label: int
    pred_label: int
    dice: float
    degenerate_cam: bool
    empty_mask: bool
    both_empty: bool = False

    @property
    def correct(self) -> bool:
        return self.label == self.pred_label

    def to_record(self) -> dict:
        return {
            "case_id": self.case_id,
            "fold": self.fold,
            "label": self.label,
            "pred_label": self.pred_label,
            "correct": self.correct,
            "dice": self.dice,
            "degenerate_cam": self.degenerate_cam,
            "empty_mask": self.empty_mask,
            "both_empty": self.both_empty,
        }


def predict_case(model: MipClassifier, case: PreparedCase, cfg: TrainConfig) -> CasePrediction:
    """Classify a case from its two views and back-project the detection mask.

    Localization uses the predicted class's activation maps (training uses the
    ground-truth class; at inference no label is available).
    """
    with torch.no_grad():
        x = torch.from_numpy(case.images).unsqueeze(1)
        logits, feats = model(x)
        probs = torch.softmax(logits, dim=1).mean(dim=0)
    pred = int(probs.argmax())
    image_shape = tuple(case.images.shape[1:])
    cams, masks2d = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # degenerate maps are recorded, not surfaced per view
        for view_idx, view in enumerate(VIEWS):
            cam = compute_cam(feats[view_idx], model.head.weight[pred],
                              class_index=pred, view=view)
            cam = upsample_cam(cam, image_shape)
            cams.append(cam)
            masks2d.append(cam_to_mask(cam, cfg.threshold_frac))
        mask3d = backproject(masks2d[0], masks2d[1])
        mask3d = refine_mask(mask3d, case.volume, cfg.suv_frac)
    return CasePrediction(pred_label=pred, probabilities=(float(probs[0]), float(probs[1])),
                          cams=tuple(cams), masks2d=tuple(masks2d), mask3d=mask3d)


def evaluate(model: MipClassifier, cases: Sequence[PreparedCase], cfg: TrainConfig,
             fold: int = -1) -> tuple[list[CaseRecord], list[tuple[PreparedCase, CasePrediction]]]:
    """Evaluate prepared cases; cases without a ground-truth mask are skipped.

    Returns (records, predictions); predictions are returned alongside so
    callers can render overlays or write predicted masks without recomputing.
    """
    records: list[CaseRecord] = []
    predictions: list[tuple[PreparedCase, CasePrediction]] = []
    for case in cases:
        if case.mask is None:
            warnings.warn(f"{case.case_id}: no ground-truth mask; skipping", UserWarning,
                          stacklevel=2)
            continue
        pred = predict_case(model, case, cfg)
        pred_empty = not pred.mask3d.data.any()
        gt_empty = not case.mask.any()
        records.append(CaseRecord(
            case_id=case.case_id,
            fold=fold,
            label=case.label,
            pred_label=pred.pred_label,
            dice=dice(pred.mask3d.data, case.mask),
            degenerate_cam=pred.degenerate,
            empty_mask=pred_empty,
            both_empty=pred_empty and gt_empty,
        ))
        predictions.append((case, pred))
    return records, predictions


def localize(model: MipClassifier, vol: PetVolume, cfg: TrainConfig) -> CasePrediction:
    """Run the full localization pipeline on a raw volume (no ground truth)."""
    vol = resample_volume(vol, cfg.target_spacing)
    vol = normalize_suv(vol, cfg.max_suv)
    if vol.shape[0] != vol.shape[1]:
        raise ValidationError(
            f"volume shape {vol.shape} has nx != ny; the shared classifier needs equal view heights"
        )
    images = np.stack([
        vol.data.max(axis=1).astype(np.float32),
        vol.data.max(axis=0).astype(np.float32),
    ])
    case = PreparedCase(case_id="volume", label=-1, images=images,
                        centers=None, volume=vol, mask=None)
    return predict_case(model, case, cfg)
