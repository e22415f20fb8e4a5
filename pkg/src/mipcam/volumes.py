"""Volume data model: resampling, SUV normalization, and MIP projection.

Axis convention used throughout the package: arrays are indexed
``data[x, y, z]`` with x = left-right, y = anterior-posterior and
z = inferior-superior.  The coronal view looks front-on and collapses y,
producing an (x, z)-indexed image; the sagittal view looks from the side and
collapses x, producing a (y, z)-indexed image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import ShapeError, ValidationError


class View(str, Enum):
    CORONAL = "coronal"
    SAGITTAL = "sagittal"


#: Array axis removed by each projection.
PROJECTED_AXIS = {View.CORONAL: 1, View.SAGITTAL: 0}


class Point3D(NamedTuple):
    """Integer voxel coordinate in a 3D grid."""

    x: int
    y: int
    z: int


class Point2D(NamedTuple):
    """Integer pixel coordinate (u, v) in a projected image, tagged with its view."""

    u: int
    v: int
    view: View


@dataclass(frozen=True)
class PetVolume:
    """A 3D PET intensity grid with physical voxel spacing in millimetres.

    Values are SUV (or normalized SUV after :func:`normalize_suv`); spacing
    components must be strictly positive.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ShapeError(f"volume data must be 3D, got {data.ndim} dimensions")
        if len(self.spacing) != 3:
            raise ValidationError(f"spacing must have 3 components, got {self.spacing!r}")
        spacing = tuple(float(s) for s in self.spacing)
        if any(not math.isfinite(s) or s <= 0 for s in spacing):
            raise ValidationError(f"spacing components must be positive, got {spacing!r}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)


@dataclass(frozen=True)
class MipImage:
    """A 2D maximum intensity projection of a :class:`PetVolume`.

    ``data[u, v]`` is the maximum along the projected axis; for the coronal
    view (u, v) = (x, z), for the sagittal view (u, v) = (y, z).
    """

    data: np.ndarray
    view: View
    source_shape: tuple[int, int, int]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeError(f"MIP image must be 2D, got {data.ndim} dimensions")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "view", View(self.view))
        object.__setattr__(self, "source_shape", tuple(int(n) for n in self.source_shape))

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.data.shape)


def _nearest_indices(n_in: int, s_in: float, s_target: float) -> np.ndarray:
    """Nearest input index for each output voxel along one axis.

    Output voxel i has physical centre (i + 0.5) * s_target; the nearest input
    centre (j + 0.5) * s_in is j = round_half_up((i + 0.5) * s_target / s_in - 0.5),
    which simplifies to floor((i + 0.5) * s_target / s_in).  Exact ties go to
    the higher index.
    """
    n_out = max(int(math.floor(n_in * s_in / s_target + 0.5)), 1)
    centers = (np.arange(n_out) + 0.5) * (s_target / s_in)
    return np.clip(np.floor(centers).astype(np.intp), 0, n_in - 1)


def resample_volume(vol: PetVolume, target_spacing) -> PetVolume:
    """Resample onto a new grid by nearest-neighbour (k=1) lookup.

    The output shape per axis is round_half_up(n_in * s_in / s_target) and each
    output voxel takes the value of the input voxel whose physical centre is
    closest to its own.  Resampling to the current spacing is the identity.
    """
    if len(target_spacing) != 3 or any(s <= 0 for s in target_spacing):
        raise ValidationError(f"target spacing must be three positive values, got {target_spacing!r}")
    index_vectors = [
        _nearest_indices(n, s_in, float(s_out))
        for n, s_in, s_out in zip(vol.shape, vol.spacing, target_spacing)
    ]
    data = vol.data[np.ix_(*index_vectors)]
    return PetVolume(data=data, spacing=tuple(float(s) for s in target_spacing))


def normalize_suv(vol: PetVolume, max_suv: float = 30.0) -> PetVolume:
    """Clip intensities at ``max_suv`` and rescale to [0, 1].

    SUV values are non-negative by definition; negative inputs are rejected.
    """
    if max_suv <= 0:
        raise ValidationError(f"max_suv must be positive, got {max_suv}")
    if vol.data.size and float(vol.data.min()) < 0:
        raise ValidationError("volume contains negative values; SUV data must be non-negative")
    data = np.minimum(vol.data, max_suv) / max_suv
    return PetVolume(data=data, spacing=vol.spacing)


def mip_project(vol: PetVolume, view: View | str) -> MipImage:
    """Maximum intensity projection along the view's collapsed axis."""
    view = View(view)
    if vol.data.size == 0:
        raise ValidationError("cannot project an empty volume")
    img = vol.data.max(axis=PROJECTED_AXIS[view])
    return MipImage(data=img, view=view, source_shape=vol.shape)


def project_center(center: Point3D, view: View | str, shape: tuple[int, int, int]) -> Point2D:
    """Express a 3D voxel coordinate in a projected view.

    Coronal keeps (x, z); sagittal keeps (y, z).  The point must lie inside
    the grid given by ``shape``.
    """
    view = View(view)
    x, y, z = (int(c) for c in center)
    for value, bound, name in ((x, shape[0], "x"), (y, shape[1], "y"), (z, shape[2], "z")):
        if not 0 <= value < bound:
            raise ValidationError(f"center {name}={value} outside grid of shape {tuple(shape)}")
    if view is View.CORONAL:
        return Point2D(x, z, view)
    return Point2D(y, z, view)
