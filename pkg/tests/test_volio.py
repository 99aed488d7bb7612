import gzip
import json
import struct

import nibabel as nib
import numpy as np
import pytest

from bronchus_idg.core.errors import (
    MaskDomainError,
    UnsupportedDatatypeError,
    VolumeFormatError,
    VolumeIOError,
    VolumeWriteError,
)
from bronchus_idg.grid import BinaryMask3, GridShape, Volume3
from bronchus_idg.volio import VolumeHeader, read_raw, read_volume, write_raw, write_volume


@pytest.fixture
def ct_volume():
    rng = np.random.default_rng(7)
    data = rng.uniform(-1000.0, 600.0, size=(7, 5, 4))
    return Volume3(GridShape.of((7, 5, 4), (0.7, 0.8, 1.25)), data)


@pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
def test_float32_roundtrip_preserves_data_and_spacing(tmp_path, ct_volume, suffix):
    path = write_volume(tmp_path / f"ct{suffix}", ct_volume)
    back, header = read_volume(path)
    assert header.dims == (7, 5, 4)
    assert header.spacing == pytest.approx((0.7, 0.8, 1.25))
    assert header.datatype == "float32"
    assert np.array_equal(back.data, ct_volume.data)


def test_written_header_is_nifti1_little_endian(tmp_path, ct_volume):
    path = write_volume(tmp_path / "ct.nii", ct_volume)
    raw = path.read_bytes()
    assert struct.unpack("<i", raw[:4])[0] == 348
    assert raw[344:348] == b"n+1\x00"
    assert struct.unpack("<f", raw[108:112])[0] == pytest.approx(352.0)


def test_int16_with_slope_and_intercept(tmp_path):
    data = np.array([-1000.0, -500.0, 0.0, 600.0]).reshape(4, 1, 1)
    v = Volume3.from_array(data)
    header = VolumeHeader(dims=(4, 1, 1), spacing=(1.0, 1.0, 1.0), datatype="int16", scl_slope=2.0, scl_inter=-1024.0)
    path = write_volume(tmp_path / "scaled.nii", v, header=header)
    back, hdr = read_volume(path)
    assert hdr.datatype == "int16"
    assert hdr.scl_slope == pytest.approx(2.0)
    assert hdr.scl_inter == pytest.approx(-1024.0)
    assert np.allclose(back.data, data)
    stored = np.asarray(nib.load(str(path)).dataobj.get_unscaled()).ravel()
    assert stored.tolist() == [12, 262, 512, 812]


def test_scaling_written_by_nibabel_is_reported(tmp_path):
    raw = np.arange(8, dtype=np.int16).reshape(2, 2, 2)
    img = nib.Nifti1Image(raw, np.eye(4))
    img.header.set_data_dtype(np.int16)
    img.header.set_slope_inter(0.5, 10.0)
    path = tmp_path / "external.nii"
    nib.save(img, str(path))
    back, hdr = read_volume(path)
    assert hdr.scl_slope == pytest.approx(0.5)
    assert hdr.scl_inter == pytest.approx(10.0)
    assert np.allclose(back.data, raw * 0.5 + 10.0)


def test_header_passthrough_keeps_scaling(tmp_path):
    data = np.array([-1000.0, -24.0, 0.0, 976.0]).reshape(4, 1, 1)
    header = VolumeHeader(dims=(4, 1, 1), spacing=(1.0, 1.0, 1.0), datatype="int16", scl_slope=2.0, scl_inter=-1024.0)
    first = write_volume(tmp_path / "a.nii", Volume3.from_array(data), header=header)
    v, hdr = read_volume(first)
    second = write_volume(tmp_path / "b.nii", v, header=hdr)
    _, hdr2 = read_volume(second)
    assert (hdr2.scl_slope, hdr2.scl_inter) == pytest.approx((2.0, -1024.0))
    stored = np.asarray(nib.load(str(second)).dataobj.get_unscaled()).ravel()
    assert stored.tolist() == [12, 500, 512, 1000]


def test_odd_spacing_survives_roundtrip(tmp_path):
    spacing = (0.7, 0.3333333, 1.1)
    v = Volume3(GridShape.of((3, 4, 5), spacing), np.zeros((3, 4, 5)))
    _, hdr = read_volume(write_volume(tmp_path / "odd.nii.gz", v))
    assert np.allclose(hdr.spacing, spacing, rtol=0.0, atol=1e-5)


def test_int16_out_of_range_rejected(tmp_path):
    v = Volume3.from_array(np.full((2, 2, 2), 1e6))
    with pytest.raises(UnsupportedDatatypeError):
        write_volume(tmp_path / "big.nii", v, datatype="int16")


def test_mask_roundtrip(tmp_path):
    arr = np.zeros((5, 6, 7), dtype=bool)
    arr[1:3, 2:5, 3] = True
    mask = BinaryMask3.from_array(arr, spacing=(1.0, 0.5, 2.0))
    path = write_volume(tmp_path / "mask.nii.gz", mask)
    back, header = read_volume(path, as_mask=True)
    assert isinstance(back, BinaryMask3)
    assert header.datatype == "uint8"
    assert back == mask


def test_mask_with_other_values_rejected(tmp_path):
    v = Volume3.from_array(np.array([0.0, 1.0, 2.0]).reshape(3, 1, 1))
    path = write_volume(tmp_path / "labels.nii", v)
    with pytest.raises(MaskDomainError):
        read_volume(path, as_mask=True)


def test_four_dimensional_singleton_is_squeezed(tmp_path):
    img = nib.Nifti1Image(np.ones((3, 4, 5, 1), dtype=np.float32), np.eye(4))
    path = tmp_path / "four.nii"
    img.to_filename(str(path))
    back, header = read_volume(path)
    assert back.shape.extents == (3, 4, 5)


def test_bad_magic_is_format_error(tmp_path):
    path = tmp_path / "garbage.nii"
    path.write_bytes(b"\x00" * 400)
    with pytest.raises(VolumeFormatError):
        read_volume(path)


def test_nifti2_rejected(tmp_path):
    head = struct.pack("<i", 540) + b"\x00" * 600
    path = tmp_path / "n2.nii.gz"
    with gzip.open(path, "wb") as f:
        f.write(head)
    with pytest.raises(VolumeFormatError):
        read_volume(path)


def test_big_endian_rejected(tmp_path):
    path = tmp_path / "be.nii"
    path.write_bytes(struct.pack(">i", 348) + b"\x00" * 400)
    with pytest.raises(VolumeIOError):
        read_volume(path)


def test_unsupported_datatype(tmp_path):
    img = nib.Nifti1Image(np.ones((2, 2, 2), dtype=np.float64), np.eye(4))
    path = tmp_path / "f64.nii"
    img.to_filename(str(path))
    with pytest.raises(UnsupportedDatatypeError):
        read_volume(path)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(VolumeIOError) as exc:
        read_volume(tmp_path / "nope.nii")
    assert exc.value.exit_code == 1


def test_unwritable_path(tmp_path, ct_volume):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(VolumeWriteError):
        write_volume(blocker / "sub" / "ct.nii", ct_volume)


def test_raw_sidecar_roundtrip(tmp_path, ct_volume):
    path = write_raw(tmp_path / "ct.raw", ct_volume)
    meta = json.loads((tmp_path / "ct.json").read_text(encoding="utf-8"))
    assert meta["dims"] == [7, 5, 4]
    assert meta["dtype"] == "float32"
    data, header = read_raw(path)
    assert np.array_equal(data.astype(np.float32), ct_volume.data)
    # x 变化最快
    flat = np.fromfile(path, dtype="<f4")
    assert flat[1] == ct_volume.data[1, 0, 0]


def test_raw_dispatch_for_masks(tmp_path):
    mask = BinaryMask3.from_array(np.eye(3, dtype=bool)[:, :, None].repeat(2, axis=2))
    path = write_volume(tmp_path / "m.raw", mask)
    back, header = read_volume(path, as_mask=True)
    assert header.datatype == "uint8"
    assert back == mask
