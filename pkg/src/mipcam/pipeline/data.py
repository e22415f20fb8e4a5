"""Dataset loading, per-case preprocessing, and stratified fold assignment."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ShapeError, StratificationError, ValidationError
from ..nifti import load_annotation, load_mask, load_volume
from ..volumes import (MipImage, PetVolume, Point2D, Point3D, View, mip_project,
                       normalize_suv, project_center, resample_volume)
from .config import TrainConfig

VIEWS = (View.CORONAL, View.SAGITTAL)


@dataclass(frozen=True)
class LoadedCase:
    """One raw dataset case: volume plus weak labels, mask optional (eval only)."""

    case_id: str
    volume: PetVolume
    label: int
    center: Point3D
    mask: np.ndarray | None = None


def load_dataset(manifest_path) -> tuple[list[LoadedCase], dict]:
    """Load cases listed in a dataset manifest; returns (cases, phantom config dict)."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ConfigError(f"dataset manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "mipcam-dataset/1":
        raise ConfigError(f"{manifest_path}: unknown dataset format {manifest.get('format')!r}")
    root = manifest_path.parent
    cases = []
    for entry in manifest["cases"]:
        annotation = load_annotation(root / entry["annotation"])
        volume = load_volume(root / entry["volume"])
        mask = load_mask(root / entry["mask"]) if entry.get("mask") else None
        cases.append(LoadedCase(case_id=entry["case_id"], volume=volume,
                                label=annotation.label, center=annotation.center, mask=mask))
    return cases, manifest.get("config", {})


def make_training_example(
    vol: PetVolume, center: Point3D, label: int,
) -> tuple[tuple[MipImage, MipImage], tuple[Point2D, Point2D], int]:
    """Turn a preprocessed volume into its two view images and projected centres."""
    mips = tuple(mip_project(vol, view) for view in VIEWS)
    points = tuple(project_center(center, view, vol.shape) for view in VIEWS)
    return mips, points, int(label)


def _remap_index(c: int, n_in: int, s_in: float, s_out: float, n_out: int) -> int:
    # Same physical-centre mapping as the resampler, inverted for a source index.
    mapped = math.floor(((c + 0.5) * s_in / s_out - 0.5) + 0.5)
    return min(max(mapped, 0), n_out - 1)


@dataclass(frozen=True)
class PreparedCase:
    """A case after resampling, SUV normalization and MIP extraction.

    ``centers`` is None only for label-free inference volumes.
    """

    case_id: str
    label: int
    images: np.ndarray  # (2, H, W) float32, [coronal, sagittal]
    centers: tuple[Point2D, Point2D] | None
    volume: PetVolume  # normalized, resampled
    mask: np.ndarray | None


def prepare_case(case: LoadedCase, cfg: TrainConfig) -> PreparedCase:
    vol = resample_volume(case.volume, cfg.target_spacing)
    vol = normalize_suv(vol, cfg.max_suv)
    center = Point3D(*(
        _remap_index(c, n_in, s_in, s_out, n_out)
        for c, n_in, s_in, s_out, n_out in zip(
            case.center, case.volume.shape, case.volume.spacing, cfg.target_spacing, vol.shape)
    ))
    mask = case.mask
    if mask is not None and mask.shape != vol.shape:
        mask_vol = resample_volume(
            PetVolume(mask.astype(np.float32), case.volume.spacing), cfg.target_spacing)
        mask = mask_vol.data >= 0.5
    mips, points, label = make_training_example(vol, center, case.label)
    if mips[0].shape[0] != mips[1].shape[0]:
        raise ShapeError(
            f"{case.case_id}: views have different image heights {mips[0].shape} vs "
            f"{mips[1].shape}; the shared classifier needs nx == ny"
        )
    images = np.stack([m.data.astype(np.float32) for m in mips])
    return PreparedCase(case_id=case.case_id, label=label, images=images,
                        centers=points, volume=vol, mask=mask)


@dataclass(frozen=True)
class FoldSplit:
    """Stratified k-fold assignment; ``folds[i]`` holds the test case ids of fold i."""

    k: int
    folds: tuple[tuple[str, ...], ...]

    def test_ids(self, fold: int) -> set[str]:
        return set(self.folds[fold])

    def train_ids(self, fold: int) -> set[str]:
        return {cid for i, ids in enumerate(self.folds) if i != fold for cid in ids}


def make_folds(case_ids: list[str], labels: list[int], k: int, seed: int) -> FoldSplit:
    """Deal shuffled cases of each class round-robin onto k folds.

    Fails if any fold would end up with a single class on either side of the
    split, or if the dataset is smaller than k.
    """
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    if len(case_ids) < k:
        raise ValidationError(f"{len(case_ids)} cases cannot fill {k} folds")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF01D]))
    folds: list[list[str]] = [[] for _ in range(k)]
    slot = 0
    for cls in sorted(set(labels)):
        members = [cid for cid, lab in zip(case_ids, labels) if lab == cls]
        order = rng.permutation(len(members))
        for j in order:
            folds[slot % k].append(members[int(j)])
            slot += 1
    label_of = dict(zip(case_ids, labels))
    for i, fold in enumerate(folds):
        test_labels = {label_of[cid] for cid in fold}
        train_labels = {label_of[cid] for j, f2 in enumerate(folds) if j != i for cid in f2}
        if len(test_labels) < 2 or len(train_labels) < 2:
            raise StratificationError(
                f"fold {i} would see a single class (test={sorted(test_labels)}, "
                f"train={sorted(train_labels)}); add cases or reduce k"
            )
    return FoldSplit(k=k, folds=tuple(tuple(f) for f in folds))
