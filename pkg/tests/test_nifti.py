import gzip
import hashlib

import numpy as np
import pytest

from mipcam import PetVolume, Point3D, ValidationError
from mipcam.nifti import (load_annotation, load_mask, load_volume, read_nifti, save_annotation,
                          save_mask, save_volume, write_nifti)


def test_volume_roundtrip(tmp_path, rng):
    vol = PetVolume(rng.uniform(0, 30, (5, 6, 7)).astype(np.float32), spacing=(4.06, 4.06, 2.0))
    path = save_volume(tmp_path / "case.nii.gz", vol)
    back = load_volume(path)
    assert np.array_equal(back.data, vol.data)
    assert back.spacing == pytest.approx(vol.spacing, abs=1e-6)


def test_uncompressed_roundtrip(tmp_path, rng):
    data = rng.uniform(0, 1, (3, 4, 5)).astype(np.float32)
    write_nifti(tmp_path / "plain.nii", data, (2.0, 2.0, 2.0))
    img = read_nifti(tmp_path / "plain.nii")
    assert np.array_equal(img.data, data)


def test_mask_roundtrip(tmp_path, rng):
    mask = rng.uniform(size=(4, 5, 6)) > 0.5
    path = save_mask(tmp_path / "mask.nii.gz", mask, (2.0, 2.0, 2.0))
    assert np.array_equal(load_mask(path), mask)


def test_written_bytes_are_deterministic(tmp_path, rng):
    data = rng.uniform(0, 10, (4, 4, 4)).astype(np.float32)
    p1 = write_nifti(tmp_path / "a.nii.gz", data, (2, 2, 2))
    p2 = write_nifti(tmp_path / "b.nii.gz", data, (2, 2, 2))
    assert hashlib.sha256(p1.read_bytes()).digest() == hashlib.sha256(p2.read_bytes()).digest()


def test_fortran_axis_order_on_disk(tmp_path):
    # x must vary fastest in the serialized stream (NIfTI convention).
    data = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    path = write_nifti(tmp_path / "order.nii.gz", data, (1, 1, 1))
    raw = gzip.decompress(path.read_bytes())
    stream = np.frombuffer(raw, dtype="<f4", offset=352)
    assert stream[0] == data[0, 0, 0]
    assert stream[1] == data[1, 0, 0]


def test_scl_slope_applied_on_read(tmp_path):
    data = np.ones((2, 2, 2), dtype=np.int16)
    path = write_nifti(tmp_path / "scaled.nii", data, (1, 1, 1))
    raw = bytearray(path.read_bytes())
    import struct

    struct.pack_into("<f", raw, 112, 2.5)  # scl_slope
    struct.pack_into("<f", raw, 116, 1.0)  # scl_inter
    path.write_bytes(bytes(raw))
    img = read_nifti(path)
    assert np.allclose(img.data, 3.5)


def test_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.nii"
    bad.write_bytes(b"\x00" * 400)
    with pytest.raises(ValidationError):
        read_nifti(bad)


def test_annotation_roundtrip(tmp_path):
    path = save_annotation(tmp_path / "case.json", "case_0003", 1, Point3D(3, 5, 7))
    ann = load_annotation(path)
    assert ann.case_id == "case_0003"
    assert ann.label == 1
    assert ann.center == Point3D(3, 5, 7)


def test_annotation_malformed(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"case_id": "x"}')
    with pytest.raises(ValidationError):
        load_annotation(path)
