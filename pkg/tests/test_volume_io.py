"""Volume I/O: raw+sidecar round-trips, NIfTI-1 parsing, PNG export."""

import gzip
import json
import struct

import numpy as np
import pytest
from PIL import Image

from memseg.data import SliceMask, ValidationError, Volume
from memseg.volume_io import (
    load_png_mask,
    load_volume,
    mask_to_png_bytes,
    save_array_nifti,
    save_volume_nifti,
    save_volume_raw,
    slice_to_png_bytes,
    export_mask_png_slices,
)


def random_volume(shape=(16, 16, 4), seed=0):
    rng = np.random.default_rng(seed)
    return Volume(rng.random(shape).astype(np.float32), spacing=(0.5, 0.5, 2.0),
                  identifier="fixture")


class TestRawSidecar:
    def test_round_trip_bit_exact(self, tmp_path):
        vol = random_volume()
        path = save_volume_raw(vol, tmp_path / "vol.raw")
        back = load_volume(path)
        np.testing.assert_array_equal(back.voxels, vol.voxels)
        assert back.spacing == vol.spacing
        assert back.identifier == "fixture"

    def test_sidecar_header_echo(self, tmp_path):
        # 4-slice 16x16 raw with sidecar {"shape":[16,16,4],"spacing":[1,1,1]}
        raw = tmp_path / "v.raw"
        raw.write_bytes(np.zeros((16, 16, 4), dtype="<f4").tobytes())
        (tmp_path / "v.json").write_text(
            json.dumps({"shape": [16, 16, 4], "spacing": [1, 1, 1]}))
        vol = load_volume(raw)
        assert vol.shape == (16, 16, 4)
        assert vol.spacing == (1.0, 1.0, 1.0)

    def test_missing_sidecar(self, tmp_path):
        raw = tmp_path / "v.raw"
        raw.write_bytes(b"\x00" * 64)
        with pytest.raises(FileNotFoundError):
            load_volume(raw)

    def test_payload_size_mismatch(self, tmp_path):
        raw = tmp_path / "v.raw"
        raw.write_bytes(np.zeros(10, dtype="<f4").tobytes())
        (tmp_path / "v.json").write_text(json.dumps({"shape": [16, 16, 4]}))
        with pytest.raises(ValueError, match="voxels"):
            load_volume(raw)

    def test_nan_voxel_rejected(self, tmp_path):
        vox = np.zeros((16, 16, 4), dtype="<f4")
        vox[1, 2, 3] = np.nan
        raw = tmp_path / "v.raw"
        raw.write_bytes(vox.tobytes())
        (tmp_path / "v.json").write_text(json.dumps({"shape": [16, 16, 4]}))
        with pytest.raises(ValidationError, match=r"\(1, 2, 3\)"):
            load_volume(raw)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_volume(tmp_path / "absent.raw")

    def test_unknown_extension_needs_format(self, tmp_path):
        p = tmp_path / "vol.bin"
        p.write_bytes(b"")
        with pytest.raises(ValueError, match="format"):
            load_volume(p)


class TestNifti:
    def test_float_round_trip(self, tmp_path):
        vol = random_volume()
        path = save_volume_nifti(vol, tmp_path / "vol.nii")
        back = load_volume(path)
        np.testing.assert_array_equal(back.voxels, vol.voxels)
        np.testing.assert_allclose(back.spacing, vol.spacing)

    def test_gzip_round_trip(self, tmp_path):
        vol = random_volume(seed=1)
        path = save_volume_nifti(vol, tmp_path / "vol.nii.gz")
        back = load_volume(path)
        np.testing.assert_array_equal(back.voxels, vol.voxels)

    def test_paper_scale_shape(self, tmp_path):
        path = save_array_nifti(np.ones((512, 512, 100), dtype=np.uint8),
                                tmp_path / "big.nii")
        vol = load_volume(path)
        assert vol.shape == (512, 512, 100)
        assert vol.num_slices == 100

    def test_integer_dtype_preserved_as_values(self, tmp_path):
        arr = np.arange(16 * 16 * 4, dtype=np.int16).reshape(16, 16, 4) % 100
        path = save_array_nifti(arr, tmp_path / "int.nii")
        vol = load_volume(path)
        np.testing.assert_array_equal(vol.voxels, arr.astype(np.float32))

    def test_scl_scaling_applied(self, tmp_path):
        # NIfTI-1 stores scl_slope at byte 112 and scl_inter at byte 116;
        # loaders must report slope * raw + inter.
        arr = np.full((8, 8, 2), 3, dtype=np.uint8)
        path = save_array_nifti(arr, tmp_path / "scl.nii")
        blob = bytearray(path.read_bytes())
        blob[112:116] = struct.pack("<f", 2.0)
        blob[116:120] = struct.pack("<f", 10.0)
        path.write_bytes(bytes(blob))
        vol = load_volume(path)
        np.testing.assert_array_equal(vol.voxels, np.full((8, 8, 2), 16.0, np.float32))

    def test_bad_magic_rejected(self, tmp_path):
        path = save_array_nifti(np.zeros((8, 8, 2), dtype=np.uint8),
                                tmp_path / "bad.nii")
        blob = bytearray(path.read_bytes())
        blob[344:348] = b"xxx\x00"
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="magic"):
            load_volume(path)

    def test_truncated_header_rejected(self, tmp_path):
        p = tmp_path / "short.nii"
        p.write_bytes(b"\x00" * 100)
        with pytest.raises(ValueError):
            load_volume(p)

    def test_fortran_order_matches_spatial_layout(self, tmp_path):
        # voxel (r, c, k) written column-major must come back at (r, c, k)
        arr = np.zeros((8, 8, 2), dtype=np.float32)
        arr[3, 5, 1] = 7.0
        path = save_array_nifti(arr, tmp_path / "order.nii")
        vol = load_volume(path)
        assert vol.voxels[3, 5, 1] == 7.0
        assert vol.voxels.sum() == 7.0


class TestPNG:
    def test_slice_png_values(self):
        img = np.array([[0.0, 0.5], [1.0, 0.25]])
        data = slice_to_png_bytes(img)
        back = np.asarray(Image.open(__import__("io").BytesIO(data)))
        np.testing.assert_array_equal(back, np.round(img * 255).astype(np.uint8))

    def test_mask_png_binary_values(self):
        m = SliceMask(np.array([[0.9, 0.1], [0.5, 0.6]]), slice_index=0)
        back = np.asarray(Image.open(__import__("io").BytesIO(mask_to_png_bytes(m))))
        np.testing.assert_array_equal(back, [[255, 0], [0, 255]])

    def test_bad_window_rejected(self):
        with pytest.raises(ValueError):
            slice_to_png_bytes(np.zeros((4, 4)), window=(1.0, 0.0))

    def test_export_and_reload_slices(self, tmp_path):
        masks = [SliceMask((np.eye(8) * 0.9).astype(np.float32), slice_index=k)
                 for k in range(3)]
        paths = export_mask_png_slices(masks, tmp_path / "out", prefix="m")
        assert [p.name for p in paths] == ["m_0000.png", "m_0001.png", "m_0002.png"]
        back = load_png_mask(paths[1])
        np.testing.assert_array_equal(back, np.eye(8, dtype=np.uint8))
