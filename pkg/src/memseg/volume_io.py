"""Volume and mask I/O.

Two on-disk volume formats are supported:

* raw + sidecar: little-endian float32 in C order of (h, w, c) -- the slice
  index varies fastest -- stored in ``<stem>.raw``, with a JSON sidecar
  ``<stem>.json`` holding ``shape``, ``spacing`` and ``identifier``.
  This round-trips bit-exactly and is the fixture format used by the tests.
* NIfTI-1 (.nii / .nii.gz): a self-contained reader/writer for the common
  single-file layout (uint8/int16/int32/float32/float64, optional scl
  scaling). Only the voxel grid and pixdim spacing are interpreted; no
  reorientation or resampling is performed.

Masks can be exported as NIfTI volumes or as one 8-bit PNG per slice.
"""

from __future__ import annotations

import gzip
import io
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .data import SliceMask, ValidationError, Volume, binarize

_NIFTI_HDR = "<i10s18sihcc8h3f4h8f3fhcc4f2i80s24s2h6f12f16s4s"
_NIFTI_HDR_SIZE = 348

_DTYPE_BY_CODE = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
_CODE_BY_KIND = {np.dtype(k).str[1:]: c for c, k in [(2, np.uint8), (4, np.int16), (8, np.int32), (16, np.float32), (64, np.float64)]}


def _sidecar_path(raw_path: Path) -> Path:
    return raw_path.with_suffix(".json")


def save_volume_raw(volume: Volume, path: "str | Path") -> Path:
    """Write ``<stem>.raw`` plus JSON sidecar; returns the raw path."""
    path = Path(path)
    if path.suffix != ".raw":
        path = path.with_suffix(".raw")
    path.write_bytes(np.ascontiguousarray(volume.voxels, dtype="<f4").tobytes())
    sidecar = {
        "shape": list(volume.shape),
        "spacing": list(volume.spacing),
        "identifier": volume.identifier,
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n")
    return path


def _load_volume_raw(path: Path) -> Volume:
    sidecar_file = _sidecar_path(path)
    if not sidecar_file.exists():
        raise FileNotFoundError(f"missing sidecar {sidecar_file} for {path}")
    sidecar = json.loads(sidecar_file.read_text())
    try:
        shape = tuple(int(s) for s in sidecar["shape"])
        spacing = tuple(float(s) for s in sidecar.get("spacing", (1.0, 1.0, 1.0)))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed sidecar {sidecar_file}: {exc}") from exc
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(
            f"{path}: raw payload has {data.size} voxels, sidecar shape {shape} needs {expected}"
        )
    voxels = data.reshape(shape).copy()
    return Volume(voxels, spacing, str(sidecar.get("identifier", path.stem)))


def _read_nifti_bytes(path: Path) -> bytes:
    if path.name.endswith(".gz"):
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _load_volume_nifti(path: Path) -> Volume:
    blob = _read_nifti_bytes(path)
    if len(blob) < _NIFTI_HDR_SIZE:
        raise ValueError(f"{path}: truncated NIfTI header")
    order = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != _NIFTI_HDR_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", blob, 0)
        if sizeof_hdr != _NIFTI_HDR_SIZE:
            raise ValueError(f"{path}: not a NIfTI-1 file (sizeof_hdr={sizeof_hdr})")
        order = ">"
    fields = struct.unpack_from(order + _NIFTI_HDR[1:], blob, 0)
    dim = fields[7:15]
    datatype = fields[19]
    pixdim = fields[22:30]
    vox_offset = int(fields[30])
    scl_slope, scl_inter = fields[31], fields[32]
    magic = fields[-1].rstrip(b"\x00")
    if magic not in (b"n+1", b"ni1"):
        raise ValueError(f"{path}: unsupported NIfTI magic {magic!r}")
    ndim = dim[0]
    if ndim < 3:
        raise ValueError(f"{path}: need a 3D volume, header says {ndim}D")
    shape = tuple(int(d) for d in dim[1:4])
    if any(int(d) > 1 for d in dim[4 : 1 + ndim]):
        raise ValueError(f"{path}: >3D volumes are not supported (dim={dim})")
    if datatype not in _DTYPE_BY_CODE:
        raise ValueError(f"{path}: unsupported NIfTI datatype code {datatype}")
    dtype = _DTYPE_BY_CODE[datatype].newbyteorder(order)
    count = int(np.prod(shape))
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=vox_offset)
    voxels = np.asarray(data.reshape(shape, order="F"), dtype=np.float32)
    if np.isfinite(scl_slope) and scl_slope != 0.0 and (scl_slope != 1.0 or scl_inter != 0.0):
        voxels = voxels * np.float32(scl_slope) + np.float32(scl_inter)
    spacing = tuple(float(abs(p)) or 1.0 for p in pixdim[1:4])
    return Volume(voxels, spacing, path.name.split(".")[0])


def _pack_nifti_header(shape: tuple[int, int, int], spacing: tuple[float, float, float], datatype: int, bitpix: int) -> bytes:
    dim = (3, shape[0], shape[1], shape[2], 1, 1, 1, 1)
    pixdim = (1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0)
    srow_x = (spacing[0], 0.0, 0.0, 0.0)
    srow_y = (0.0, spacing[1], 0.0, 0.0)
    srow_z = (0.0, 0.0, spacing[2], 0.0)
    return struct.pack(
        _NIFTI_HDR,
        _NIFTI_HDR_SIZE,
        b"", b"", 0, 0, b"\x00", b"\x00",
        *dim,
        0.0, 0.0, 0.0,
        0, datatype, bitpix, 0,
        *pixdim,
        352.0, 1.0, 0.0,
        0, b"\x00", b"\x02",  # xyzt_units: millimetres
        0.0, 0.0, 0.0, 0.0,
        0, 0,
        b"memseg", b"",
        0, 1,  # qform unused, sform = scanner
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        *srow_x, *srow_y, *srow_z,
        b"", b"n+1\x00",
    )


def save_array_nifti(array: np.ndarray, path: "str | Path", spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> Path:
    """Write a 3D array as a single-file NIfTI-1 volume (.nii or .nii.gz)."""
    path = Path(path)
    array = np.asarray(array)
    if array.ndim != 3:
        raise ValueError(f"expected a 3D array, got shape {array.shape}")
    kind = array.dtype.str[1:]
    if kind not in _CODE_BY_KIND:
        array = array.astype(np.float32)
        kind = array.dtype.str[1:]
    code = _CODE_BY_KIND[kind]
    header = _pack_nifti_header(array.shape, spacing, code, array.dtype.itemsize * 8)
    payload = header + b"\x00" * 4 + np.asfortranarray(array).astype(array.dtype.newbyteorder("<")).tobytes(order="F")
    if path.name.endswith(".gz"):
        # GzipFile with mtime=0 keeps the archive byte-reproducible
        with open(path, "wb") as raw:
            with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
                fh.write(payload)
    else:
        path.write_bytes(payload)
    return path


def save_volume_nifti(volume: Volume, path: "str | Path") -> Path:
    return save_array_nifti(volume.voxels.astype(np.float32), path, volume.spacing)


def load_volume(path: "str | Path", format: str | None = None) -> Volume:
    """Load a volume, inferring the format from the extension unless given.

    ``format`` accepts ``"nifti"`` or ``"raw"``/``"raw+sidecar"``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such volume file: {path}")
    if format is None:
        if path.suffix == ".raw":
            format = "raw"
        elif path.name.endswith((".nii", ".nii.gz")):
            format = "nifti"
        else:
            raise ValueError(f"cannot infer volume format from {path.name!r}")
    if format in ("raw", "raw+sidecar"):
        return _load_volume_raw(path)
    if format == "nifti":
        return _load_volume_nifti(path)
    raise ValueError(f"unknown volume format {format!r}")


def slice_to_png_bytes(slice2d: np.ndarray, window: tuple[float, float] = (0.0, 1.0)) -> bytes:
    """Render one slice as an 8-bit grayscale PNG under the given window."""
    lo, hi = window
    if lo >= hi:
        raise ValueError(f"window low must be < high, got ({lo}, {hi})")
    img = np.clip((np.asarray(slice2d, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    img8 = np.round(img * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img8, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_to_png_bytes(mask: "SliceMask | np.ndarray") -> bytes:
    """Binary mask rendered as a 0/255 grayscale PNG."""
    binary = binarize(mask) * np.uint8(255)
    buf = io.BytesIO()
    Image.fromarray(binary, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def export_mask_png_slices(masks: "list[SliceMask]", out_dir: "str | Path", prefix: str = "mask") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in masks:
        p = out_dir / f"{prefix}_{m.slice_index:04d}.png"
        p.write_bytes(mask_to_png_bytes(m))
        paths.append(p)
    return paths


def load_png_mask(path: "str | Path") -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr > 127).astype(np.uint8)
