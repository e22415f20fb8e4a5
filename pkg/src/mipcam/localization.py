"""From corrected activation maps to a 3D detection mask and its Dice score.

The two thresholded view masks are combined by coordinate conjunction: a
voxel is detected iff its (x, z) silhouette pixel is on in the coronal mask
and its (y, z) pixel is on in the sagittal mask.  That is the largest 3D set
whose silhouettes fit inside the two masks.  Refinement then keeps only the
high-uptake voxels of the largest 6-connected component.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ShapeError, ValidationError
from .model import CamMap
from .volumes import PetVolume, View

_PEAK_TOLERANCE = 1e-5


@dataclass(frozen=True)
class BinaryMask2D:
    """A boolean detection mask in one projected view (view None = untagged)."""

    data: np.ndarray
    view: View | None
    threshold_frac: float | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool)
        if data.ndim != 2:
            raise ShapeError(f"2D mask must be 2D, got {data.ndim} dimensions")
        object.__setattr__(self, "data", data)
        if self.view is not None:
            object.__setattr__(self, "view", View(self.view))


@dataclass(frozen=True)
class BinaryMask3D:
    """A boolean detection volume plus provenance (threshold, views, refinement)."""

    data: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool)
        if data.ndim != 3:
            raise ShapeError(f"3D mask must be 3D, got {data.ndim} dimensions")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


def _as_array(mask, ndim: int) -> np.ndarray:
    data = mask.data if isinstance(mask, (BinaryMask2D, BinaryMask3D)) else np.asarray(mask)
    data = np.asarray(data, dtype=bool)
    if data.ndim != ndim:
        raise ShapeError(f"expected a {ndim}D mask, got shape {data.shape}")
    return data


def cam_to_mask(cam, threshold_frac: float) -> BinaryMask2D:
    """Threshold a peak-normalized image-resolution map at ``threshold_frac``.

    Requires 0 < threshold_frac < 1 and a map whose peak is 1 (or all zero,
    which yields an empty mask).
    """
    if not 0.0 < threshold_frac < 1.0:
        raise ValidationError(f"threshold_frac must be in (0, 1), got {threshold_frac}")
    data = cam.data if isinstance(cam, CamMap) else np.asarray(cam)
    if data.ndim != 2:
        raise ShapeError(f"expected a 2D map, got shape {data.shape}")
    peak = float(data.max()) if data.size else 0.0
    if peak != 0.0 and abs(peak - 1.0) > _PEAK_TOLERANCE:
        raise ValidationError(f"map peak is {peak}; expected a peak-normalized map (peak 1) or all zeros")
    view = cam.view if isinstance(cam, CamMap) else None
    return BinaryMask2D(data=data >= threshold_frac, view=view, threshold_frac=float(threshold_frac))


def backproject(coronal, sagittal) -> BinaryMask3D:
    """Conjoin two orthogonal silhouettes into a 3D mask.

    Voxel (x, y, z) is on iff coronal[x, z] and sagittal[y, z]; the two masks
    must agree on the z dimension.
    """
    if isinstance(coronal, BinaryMask2D) and coronal.view not in (None, View.CORONAL):
        raise ValidationError(f"first mask must be the coronal view, got {coronal.view}")
    if isinstance(sagittal, BinaryMask2D) and sagittal.view not in (None, View.SAGITTAL):
        raise ValidationError(f"second mask must be the sagittal view, got {sagittal.view}")
    cor = _as_array(coronal, 2)
    sag = _as_array(sagittal, 2)
    if cor.shape[1] != sag.shape[1]:
        raise ShapeError(
            f"views disagree on the z dimension: coronal {cor.shape} vs sagittal {sag.shape}"
        )
    data = cor[:, None, :] & sag[None, :, :]
    provenance = {"views": [View.CORONAL.value, View.SAGITTAL.value]}
    thresholds = [m.threshold_frac for m in (coronal, sagittal)
                  if isinstance(m, BinaryMask2D) and m.threshold_frac is not None]
    if thresholds:
        provenance["threshold_frac"] = thresholds[0]
    return BinaryMask3D(data=data, provenance=provenance)


def refine_mask(mask, vol: PetVolume, suv_frac: float) -> BinaryMask3D:
    """Keep in-mask voxels at >= suv_frac of the in-mask peak, largest component only.

    Connectivity is 6-neighborhood (faces).  An empty input yields an empty,
    flagged output.  Ties between equal-size components go to the first in
    scan order.
    """
    if not 0.0 <= suv_frac < 1.0:
        raise ValidationError(f"suv_frac must be in [0, 1), got {suv_frac}")
    data = _as_array(mask, 3)
    if data.shape != vol.shape:
        raise ShapeError(f"mask shape {data.shape} does not match volume shape {vol.shape}")
    provenance = dict(mask.provenance) if isinstance(mask, BinaryMask3D) else {}
    provenance["suv_frac"] = float(suv_frac)
    if not data.any():
        warnings.warn("refine_mask received an empty mask", UserWarning, stacklevel=2)
        provenance["empty_input"] = True
        return BinaryMask3D(data=np.zeros_like(data), provenance=provenance)
    peak = float(vol.data[data].max())
    keep = data & (vol.data >= suv_frac * peak)
    labels, n_components = ndimage.label(keep)  # default structure = 6-connectivity
    if n_components == 0:
        provenance["empty_input"] = True
        return BinaryMask3D(data=np.zeros_like(data), provenance=provenance)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = int(sizes.argmax())
    provenance["largest_component_voxels"] = int(sizes[best])
    provenance["components_dropped"] = int(n_components - 1)
    return BinaryMask3D(data=labels == best, provenance=provenance)


def dice(pred, gt) -> float:
    """Overlap score 2|A&B| / (|A| + |B|).

    Two empty masks score 1.0 (degenerate agreement, flagged by callers);
    exactly one empty mask scores 0.0.
    """
    a = np.asarray(pred.data if isinstance(pred, (BinaryMask2D, BinaryMask3D)) else pred, dtype=bool)
    b = np.asarray(gt.data if isinstance(gt, (BinaryMask2D, BinaryMask3D)) else gt, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total
