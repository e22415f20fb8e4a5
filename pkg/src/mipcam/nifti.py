"""Minimal single-file NIfTI-1 I/O (.nii and .nii.gz) plus JSON annotations.

Covers exactly what the pipeline needs: little- or big-endian single-file
images with scalar dtypes, voxel spacing taken from pixdim, and optional
scl_slope/scl_inter rescaling on read.  Written files are always
little-endian float32 (volumes) or uint8 (masks), gzipped with mtime=0 so
regenerating a dataset is byte-identical.
"""

from __future__ import annotations

import gzip
import json
import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ValidationError
from .volumes import PetVolume, Point3D

_HEADER_SIZE = 348
_VOX_OFFSET = 352
_MAGIC = b"n+1\x00"

_CODE_TO_DTYPE = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
_DTYPE_TO_CODE = {dt: code for code, dt in _CODE_TO_DTYPE.items()}


def _pack_header(shape: tuple[int, int, int], spacing: tuple[float, float, float],
                 dtype: np.dtype) -> bytes:
    nx, ny, nz = shape
    sx, sy, sz = spacing
    code = _DTYPE_TO_CODE[np.dtype(dtype)]
    hdr = bytearray(_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, _HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, np.dtype(dtype).itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(_VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    hdr[123] = 2  # xyzt_units: millimetres
    descrip = b"mipcam"
    hdr[148:148 + len(descrip)] = descrip
    struct.pack_into("<h", hdr, 252, 0)  # qform_code
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, 0.0)
    struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, 0.0)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, 0.0)
    hdr[344:348] = _MAGIC
    return bytes(hdr)


def write_nifti(path, data: np.ndarray, spacing: tuple[float, float, float]) -> Path:
    """Write a 3D array indexed [x, y, z] as a single-file NIfTI-1 image.

    ``.gz`` paths are gzip-compressed with a fixed mtime for reproducible bytes.
    """
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValidationError(f"NIfTI writer expects a 3D array, got {data.ndim} dimensions")
    if data.dtype == np.bool_:
        data = data.astype(np.uint8)
    if np.dtype(data.dtype) not in _DTYPE_TO_CODE:
        data = data.astype(np.float32)
    payload = _pack_header(data.shape, spacing, data.dtype) + b"\x00" * (_VOX_OFFSET - _HEADER_SIZE)
    payload += np.ascontiguousarray(data).astype(data.dtype.newbyteorder("<")).tobytes(order="F")
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".gz":
        with open(path, "wb") as fh:
            with gzip.GzipFile(filename="", mode="wb", fileobj=fh, mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)
    return path


class NiftiImage(NamedTuple):
    data: np.ndarray
    spacing: tuple[float, float, float]


def read_nifti(path) -> NiftiImage:
    """Read a single-file NIfTI-1 image into an [x, y, z] array plus spacing."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < _HEADER_SIZE:
        raise ValidationError(f"{path}: file too short for a NIfTI-1 header")
    order = "<"
    (size,) = struct.unpack_from("<i", raw, 0)
    if size != _HEADER_SIZE:
        order = ">"
        (size,) = struct.unpack_from(">i", raw, 0)
        if size != _HEADER_SIZE:
            raise ValidationError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
    if raw[344:347] != b"n+1":
        raise ValidationError(f"{path}: only single-file (n+1) NIfTI images are supported")
    dim = struct.unpack_from(f"{order}8h", raw, 40)
    ndim = dim[0]
    if ndim < 3 or any(d not in (0, 1) for d in dim[4:1 + ndim] if ndim > 3):
        raise ValidationError(f"{path}: expected a 3D image, got dim={dim}")
    shape = tuple(int(d) for d in dim[1:4])
    (code,) = struct.unpack_from(f"{order}h", raw, 70)
    if code not in _CODE_TO_DTYPE:
        raise ValidationError(f"{path}: unsupported NIfTI datatype code {code}")
    dtype = _CODE_TO_DTYPE[code].newbyteorder(order)
    pixdim = struct.unpack_from(f"{order}8f", raw, 76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    (vox_offset,) = struct.unpack_from(f"{order}f", raw, 108)
    slope, inter = struct.unpack_from(f"{order}2f", raw, 112)
    count = int(np.prod(shape))
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=int(vox_offset))
    data = data.reshape(shape, order="F")
    if slope not in (0.0, 1.0) or inter != 0.0:
        scale = slope if slope != 0.0 else 1.0
        data = data.astype(np.float32) * scale + inter
    else:
        data = data.astype(dtype.newbyteorder("="))
    return NiftiImage(data=data, spacing=spacing)


def save_volume(path, vol: PetVolume) -> Path:
    return write_nifti(path, vol.data.astype(np.float32), vol.spacing)


def load_volume(path) -> PetVolume:
    img = read_nifti(path)
    return PetVolume(data=img.data, spacing=img.spacing)


def save_mask(path, mask: np.ndarray, spacing: tuple[float, float, float]) -> Path:
    return write_nifti(path, np.asarray(mask, dtype=np.uint8), spacing)


def load_mask(path) -> np.ndarray:
    return read_nifti(path).data.astype(bool)


def save_annotation(path, case_id: str, label: int, center: Point3D) -> Path:
    """Write the weak-supervision sidecar: case id, class label, tumor centre voxel."""
    path = Path(path)
    record = {
        "case_id": case_id,
        "class_label": int(label),
        "center_voxel": [int(center[0]), int(center[1]), int(center[2])],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, sort_keys=True) + "\n")
    return path


class Annotation(NamedTuple):
    case_id: str
    label: int
    center: Point3D


def load_annotation(path) -> Annotation:
    record = json.loads(Path(path).read_text())
    try:
        center = Point3D(*(int(c) for c in record["center_voxel"]))
        return Annotation(str(record["case_id"]), int(record["class_label"]), center)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed annotation file: {exc}") from exc
