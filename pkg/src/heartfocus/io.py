"""File formats: NIfTI-1 (single file), a raw tensor container, PGM heatmaps, JSON manifests."""
from __future__ import annotations

import gzip
import hashlib
import json
import re
import struct
from pathlib import Path

import numpy as np

from .tensor import DataError, Volume4D

# ---------------------------------------------------------------- NIfTI-1

NIFTI_HEADER_SIZE = 348
NIFTI_DTYPES = {4: np.dtype("i2"), 512: np.dtype("u2"), 16: np.dtype("f4")}
_DTYPE_CODES = {np.dtype("i2"): 4, np.dtype("u2"): 512, np.dtype("f4"): 16}


class NiftiError(DataError):
    pass


class NiftiHeaderSizeError(NiftiError):
    pass


class NiftiMagicError(NiftiError):
    pass


class NiftiDatatypeError(NiftiError):
    pass


class NiftiTruncatedError(NiftiError):
    pass


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiTruncatedError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def read_nifti(path) -> Volume4D:
    """Load a single-file NIfTI-1 image as a float32 (t, z, y, x) volume.

    Supports int16, uint16 and float32 voxels, either byte order, optional
    gzip. ``scl_slope``/``scl_inter`` are applied when the slope is nonzero.
    """
    raw = _read_bytes(path)
    if len(raw) < NIFTI_HEADER_SIZE:
        raise NiftiTruncatedError(f"{path}: {len(raw)} bytes, shorter than a NIfTI-1 header")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[:4])[0] == NIFTI_HEADER_SIZE:
            break
    else:
        raise NiftiHeaderSizeError(f"{path}: sizeof_hdr is not {NIFTI_HEADER_SIZE}")
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise NiftiMagicError(f"{path}: magic {magic!r} is not single-file NIfTI-1 'n+1'")
    dim = struct.unpack(endian + "8h", raw[40:56])
    code = struct.unpack(endian + "h", raw[70:72])[0]
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = int(struct.unpack(endian + "f", raw[108:112])[0])
    slope, inter = struct.unpack(endian + "2f", raw[112:120])
    if code not in NIFTI_DTYPES:
        raise NiftiDatatypeError(f"{path}: unsupported datatype code {code}")
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiError(f"{path}: invalid dim[0]={ndim}")
    ext = [dim[i] if i <= ndim else 1 for i in range(1, 8)]
    if any(n < 1 for n in ext):
        raise NiftiError(f"{path}: non-positive extent in dim {dim}")
    if any(n != 1 for n in ext[4:]):
        raise NiftiError(f"{path}: more than four dimensions are not supported")
    nx, ny, nz, nt = ext[:4]
    dtype = NIFTI_DTYPES[code].newbyteorder(endian)
    count = nx * ny * nz * nt
    stop = vox_offset + count * dtype.itemsize
    if vox_offset < NIFTI_HEADER_SIZE or len(raw) < stop:
        raise NiftiTruncatedError(f"{path}: payload needs {stop} bytes, file has {len(raw)}")
    # x varies fastest on disk, which is C order for (t, z, y, x)
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=vox_offset).reshape(nt, nz, ny, nx)
    data = data.astype(np.float32)
    if slope != 0 and np.isfinite(slope):
        data = (data * np.float32(slope) + np.float32(inter)).astype(np.float32)

    def _sp(x):
        return float(x) if x > 0 and np.isfinite(x) else 1.0

    spacing = (_sp(pixdim[4]) if nt > 1 else 1.0, _sp(pixdim[3]), _sp(pixdim[2]), _sp(pixdim[1]))
    return Volume4D(data, spacing)


def write_nifti(path, v, scl_slope: float = 0.0, scl_inter: float = 0.0, dtype="f4") -> None:
    """Write a (t, z, y, x) volume as single-file little-endian NIfTI-1."""
    if isinstance(v, Volume4D):
        data, spacing = v.data, v.spacing
    else:
        data, spacing = np.asarray(v), (1.0, 1.0, 1.0, 1.0)
    dt = np.dtype(dtype)
    if dt not in _DTYPE_CODES:
        raise NiftiDatatypeError(f"cannot write dtype {dt}")
    nt, nz, ny, nx = data.shape
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 4, nx, ny, nz, nt, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, _DTYPE_CODES[dt], dt.itemsize * 8)
    sp_t, sp_z, sp_y, sp_x = spacing
    struct.pack_into("<8f", hdr, 76, 1.0, sp_x, sp_y, sp_z, sp_t, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, scl_slope, scl_inter)
    struct.pack_into("<h", hdr, 254, 1)
    struct.pack_into("<4f", hdr, 280, sp_x, 0, 0, 0)
    struct.pack_into("<4f", hdr, 296, 0, sp_y, 0, 0)
    struct.pack_into("<4f", hdr, 312, 0, 0, sp_z, 0)
    hdr[344:348] = b"n+1\x00"
    payload = hdr + b"\x00" * 4 + np.ascontiguousarray(data, dtype=dt.newbyteorder("<")).tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        payload = gzip.compress(bytes(payload), mtime=0)
    path.write_bytes(payload)


# ---------------------------------------------------------------- tensor container

CONTAINER_MAGIC = "HFTENSOR 1"
_AXES = {4: "t,z,y,x", 3: "z,y,x"}


def write_container(path, v) -> None:
    """Text header then little-endian float32 payload in row-major order."""
    if isinstance(v, Volume4D):
        data, spacing = v.data, v.spacing
    else:
        data = np.asarray(v)
        spacing = (1.0,) * data.ndim
    if data.ndim not in _AXES:
        raise DataError(f"container holds 3D or 4D arrays, got ndim={data.ndim}")
    header = "\n".join(
        [
            CONTAINER_MAGIC,
            f"axes {_AXES[data.ndim]}",
            "dtype float32le",
            "dims " + " ".join(str(int(n)) for n in data.shape),
            "spacing " + " ".join(repr(float(s)) for s in spacing),
            "end",
            "",
        ]
    )
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    Path(path).write_bytes(header.encode("ascii") + payload)


def read_container(path):
    """Inverse of :func:`write_container`: a Volume4D for 4D files, an array for 3D."""
    raw = Path(path).read_bytes()
    end = raw.find(b"\nend\n")
    if not raw.startswith(CONTAINER_MAGIC.encode() + b"\n") or end < 0:
        raise DataError(f"{path}: not a tensor container")
    fields = {}
    for line in raw[:end].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition(" ")
        fields[key] = value
    try:
        dims = tuple(int(n) for n in fields["dims"].split())
        spacing = tuple(float(s) for s in fields["spacing"].split())
        axes = fields["axes"]
        dtype = fields["dtype"]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed container header ({exc})") from exc
    if dtype != "float32le" or len(dims) not in _AXES or axes != _AXES[len(dims)]:
        raise DataError(f"{path}: unsupported container layout {axes!r} {dtype!r}")
    if any(n < 1 for n in dims) or len(spacing) != len(dims):
        raise DataError(f"{path}: invalid dims {dims} or spacing {spacing}")
    payload = raw[end + 5 :]
    expected = int(np.prod(dims)) * 4
    if len(payload) != expected:
        raise DataError(f"{path}: payload is {len(payload)} bytes, header dims need {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if len(dims) == 4:
        return Volume4D(data, spacing)
    return data


def load_volume(path) -> Volume4D:
    name = str(path)
    if name.endswith((".nii", ".nii.gz")):
        return read_nifti(path)
    v = read_container(path)
    if not isinstance(v, Volume4D):
        raise DataError(f"{path}: expected a 4D sequence")
    return v


# ---------------------------------------------------------------- heatmaps


def heatmap_bytes(slice2d: np.ndarray, epsilon: float = 1e-7) -> bytes:
    a = np.asarray(slice2d, dtype=np.float64)
    lo, hi = a.min(), a.max()
    scaled = (a - lo + epsilon) / (hi - lo + epsilon)
    pix = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


def write_heatmap(map3d: np.ndarray, slice_index: int, path) -> None:
    """Binary PGM of one z slice, min-max scaled within that slice."""
    a = np.asarray(map3d)
    if a.ndim != 3:
        raise DataError("heatmap source must be a (z, y, x) map")
    if not 0 <= slice_index < a.shape[0]:
        raise DataError(f"slice {slice_index} outside 0..{a.shape[0] - 1}")
    Path(path).write_bytes(heatmap_bytes(a[slice_index]))


_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # exactly one whitespace byte ends the header; payload bytes may look like whitespace
    m = _PGM_HEADER.match(raw)
    if m is None:
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM is supported")
    pix = raw[m.end() :]
    if len(pix) < w * h:
        raise DataError(f"{path}: PGM payload truncated")
    return np.frombuffer(pix[: w * h], dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------- manifests


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj))


def read_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if "records" not in manifest or "config_digest" not in manifest:
        raise DataError(f"{path}: not an ROI manifest")
    if config_digest(manifest.get("config", {})) != manifest["config_digest"]:
        raise DataError(f"{path}: config digest does not match the recorded configuration")
    for rec in manifest["records"]:
        box = rec["box"]
        for l, h, n in zip(box["lo"], box["hi"], box["source"]):
            if not 0 <= l < h <= n:
                raise DataError(f"{path}: box {box} outside source dims")
    return manifest
