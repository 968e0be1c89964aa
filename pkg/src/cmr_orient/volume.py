"""Volume container and file I/O: a NIfTI-1 single-file subset plus a raw
``.bin`` + ``.json`` sidecar format used by the test fixtures.

Only 2D/3D volumes with dtypes u8/i16/u16/f32 are supported.  The original
header bytes are retained so that untouched volumes round-trip losslessly
(fields this tool does not own, e.g. ``descrip`` and intent codes, pass
through unchanged).

Affine precedence on read: sform (sform_code > 0), else qform reconstructed
from the quaternion, else a pixdim diagonal.  The quaternion reconstruction
follows the NIfTI-1 reference formula::

    R = [[a*a+b*b-c*c-d*d, 2*b*c-2*a*d,     2*b*d+2*a*c    ],
         [2*b*c+2*a*d,     a*a+c*c-b*b-d*d, 2*c*d-2*a*b    ],
         [2*b*d-2*a*c,     2*c*d+2*a*b,     a*a+d*d-b*b-c*c]]

with a = sqrt(1-b^2-c^2-d^2), columns scaled by pixdim (and qfac for the
third axis).
"""

from __future__ import annotations

import gzip
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

__all__ = [
    "Volume",
    "VolumeError",
    "CorruptHeaderError",
    "UnsupportedDtypeError",
    "DimensionError",
    "VolumeIOError",
    "read_volume",
    "write_volume",
    "iter_slices",
]


class VolumeError(Exception):
    """Base class for volume I/O failures."""


class CorruptHeaderError(VolumeError):
    pass


class UnsupportedDtypeError(VolumeError):
    pass


class DimensionError(VolumeError):
    pass


class VolumeIOError(VolumeError):
    pass


# NIfTI-1 datatype codes we accept.
_DT_TO_NP = {2: np.uint8, 4: np.int16, 512: np.uint16, 16: np.float32}
_NP_TO_DT = {np.dtype(v).name: k for k, v in _DT_TO_NP.items()}
_DTYPE_TAGS = {"uint8": "u8", "int16": "i16", "uint16": "u16", "float32": "f32"}
_TAG_TO_NP = {v: k for k, v in _DTYPE_TAGS.items()}

_HDR_SIZE = 348


def _identity_affine(spacing) -> np.ndarray:
    a = np.eye(4)
    for i, s in enumerate(spacing[:3]):
        a[i, i] = s
    return a


@dataclass(frozen=True)
class Volume:
    """Voxel array (2D slice or 3D stack) with spacing and affine.

    ``voxels`` axes are (axis0, axis1[, z]); the affine maps the array
    index (i0, i1, z, 1) to world millimeters.  ``max_gray`` is always the
    actual maximum voxel value.
    """

    voxels: np.ndarray
    spacing: tuple[float, ...]
    affine: np.ndarray
    dtype_tag: str = "f32"
    header_bytes: Optional[bytes] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.voxels)
        if v.ndim not in (2, 3):
            raise DimensionError(f"volume must be 2D or 3D, got {v.ndim}D")
        if len(self.spacing) != v.ndim:
            raise ValueError("spacing length must match dimensionality")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive: {self.spacing}")
        a = np.asarray(self.affine, dtype=float)
        if a.shape != (4, 4) or abs(np.linalg.det(a)) < 1e-12:
            raise ValueError("affine must be an invertible 4x4 matrix")
        object.__setattr__(self, "voxels", v)
        object.__setattr__(self, "affine", a)

    @property
    def max_gray(self) -> float:
        """G: the maximum gray value of the volume."""
        return float(self.voxels.max())

    @property
    def n_slices(self) -> int:
        return 1 if self.voxels.ndim == 2 else self.voxels.shape[2]

    def replace(self, **kw) -> "Volume":
        # Any voxel/geometry change invalidates the retained header bytes.
        if any(k in kw for k in ("voxels", "spacing", "affine")):
            kw.setdefault("header_bytes", None)
        return replace(self, **kw)


def iter_slices(vol: Volume) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (z index, 2D slice); a 2D volume yields itself once."""
    if vol.voxels.ndim == 2:
        yield 0, vol.voxels
    else:
        for k in range(vol.voxels.shape[2]):
            yield k, vol.voxels[:, :, k]


def _is_gzip(path: Path) -> bool:
    with open(path, "rb") as f:
        return f.read(2) == b"\x1f\x8b"


def _read_bytes(path: Path) -> bytes:
    if _is_gzip(path):
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _quaternion_affine(hdr: dict) -> np.ndarray:
    b, c, d = hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"]
    a2 = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(max(a2, 0.0))
    r = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * b * c - 2 * a * d, 2 * b * d + 2 * a * c],
            [2 * b * c + 2 * a * d, a * a + c * c - b * b - d * d, 2 * c * d - 2 * a * b],
            [2 * b * d - 2 * a * c, 2 * c * d + 2 * a * b, a * a + d * d - b * b - c * c],
        ]
    )
    pixdim = hdr["pixdim"]
    qfac = -1.0 if pixdim[0] == -1.0 else 1.0
    scale = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    out = np.eye(4)
    out[:3, :3] = r * scale
    out[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return out


def _parse_header(raw: bytes) -> dict:
    if len(raw) < _HDR_SIZE:
        raise CorruptHeaderError(f"header truncated: {len(raw)} bytes")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != _HDR_SIZE:
        raise CorruptHeaderError(f"bad sizeof_hdr {sizeof_hdr}")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise CorruptHeaderError(f"bad magic {magic!r}")
    dim = struct.unpack_from("<8h", raw, 40)
    datatype, bitpix = struct.unpack_from("<hh", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    qform_code, sform_code = struct.unpack_from("<hh", raw, 252)
    quatern = struct.unpack_from("<6f", raw, 256)
    srow = struct.unpack_from("<12f", raw, 280)
    return {
        "dim": dim,
        "datatype": datatype,
        "bitpix": bitpix,
        "pixdim": pixdim,
        "vox_offset": int(vox_offset),
        "qform_code": qform_code,
        "sform_code": sform_code,
        "quatern_b": quatern[0],
        "quatern_c": quatern[1],
        "quatern_d": quatern[2],
        "qoffset_x": quatern[3],
        "qoffset_y": quatern[4],
        "qoffset_z": quatern[5],
        "srow": srow,
    }


def _read_nifti(path: Path) -> Volume:
    raw = _read_bytes(path)
    hdr = _parse_header(raw)
    ndim = hdr["dim"][0]
    if ndim < 2:
        raise DimensionError(f"unsupported dim[0]={ndim}")
    shape = [max(1, hdr["dim"][i + 1]) for i in range(ndim)]
    # Trailing singleton dims are tolerated; true >3D is not.
    while len(shape) > 3 and shape[-1] == 1:
        shape.pop()
    if len(shape) > 3:
        raise DimensionError(f"volumes beyond 3D unsupported: shape {shape}")
    if hdr["datatype"] not in _DT_TO_NP:
        raise UnsupportedDtypeError(f"NIfTI datatype {hdr['datatype']}")
    np_dtype = np.dtype(_DT_TO_NP[hdr["datatype"]]).newbyteorder("<")
    offset = hdr["vox_offset"] or _HDR_SIZE + 4
    n = int(np.prod(shape))
    need = offset + n * np_dtype.itemsize
    if len(raw) < need:
        raise CorruptHeaderError(
            f"data truncated: need {need} bytes, file has {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=np_dtype, count=n, offset=offset)
    voxels = np.asarray(data.reshape(shape, order="F"), dtype=_DT_TO_NP[hdr["datatype"]])
    spacing = tuple(float(hdr["pixdim"][i + 1]) for i in range(len(shape)))
    if any(s <= 0 for s in spacing):
        spacing = tuple(s if s > 0 else 1.0 for s in spacing)
    if hdr["sform_code"] > 0:
        s = hdr["srow"]
        affine = np.array(
            [s[0:4], s[4:8], s[8:12], [0.0, 0.0, 0.0, 1.0]], dtype=float
        )
    elif hdr["qform_code"] > 0:
        affine = _quaternion_affine(hdr)
    else:
        affine = _identity_affine(spacing)
    if abs(np.linalg.det(affine)) < 1e-12:
        affine = _identity_affine(spacing)
    tag = _DTYPE_TAGS[np.dtype(voxels.dtype).name]
    return Volume(
        voxels=voxels,
        spacing=spacing,
        affine=affine,
        dtype_tag=tag,
        header_bytes=raw[:offset],
    )


def _build_header(vol: Volume) -> bytes:
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    shape = vol.voxels.shape
    dim = [len(shape)] + list(shape) + [1] * (7 - len(shape))
    struct.pack_into("<8h", hdr, 40, *dim)
    dt = _NP_TO_DT[np.dtype(vol.voxels.dtype).name]
    struct.pack_into("<hh", hdr, 70, dt, np.dtype(vol.voxels.dtype).itemsize * 8)
    pixdim = [1.0] + list(vol.spacing) + [1.0] * (7 - len(shape))
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(_HDR_SIZE + 4))
    struct.pack_into("<hh", hdr, 252, 0, 1)  # qform off, sform on
    a = vol.affine
    struct.pack_into("<12f", hdr, 280, *a[0], *a[1], *a[2])
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + b"\x00\x00\x00\x00"


def _encode_nifti(vol: Volume) -> bytes:
    if vol.header_bytes is not None:
        head = vol.header_bytes
    else:
        head = _build_header(vol)
    data = np.asarray(vol.voxels, dtype=vol.voxels.dtype)
    body = data.tobytes(order="F")
    return head + body


def _atomic_write(path: Path, payload: bytes, gz: bool) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                if gz:
                    with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as z:
                        z.write(payload)
                else:
                    f.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise VolumeIOError(f"cannot write {path}: {e}") from e


def _read_sidecar(path: Path) -> Volume:
    jpath = path.with_suffix(".json")
    bpath = path.with_suffix(".bin")
    try:
        meta = json.loads(jpath.read_text())
        raw = bpath.read_bytes()
    except OSError as e:
        raise VolumeIOError(f"cannot read sidecar pair for {path}: {e}") from e
    shape = tuple(meta["shape"])
    np_dtype = np.dtype(_TAG_TO_NP[meta["dtype"]]).newbyteorder("<")
    n = int(np.prod(shape))
    if len(raw) != n * np_dtype.itemsize:
        raise CorruptHeaderError(
            f"sidecar .bin size {len(raw)} does not match shape {shape}"
        )
    voxels = np.frombuffer(raw, dtype=np_dtype).reshape(shape)  # row-major
    return Volume(
        voxels=np.asarray(voxels, dtype=np_dtype.newbyteorder("=")),
        spacing=tuple(meta["spacing"]),
        affine=np.array(meta["affine"], dtype=float),
        dtype_tag=meta["dtype"],
    )


def _write_sidecar(vol: Volume, path: Path) -> None:
    meta = {
        "shape": list(vol.voxels.shape),
        "spacing": list(vol.spacing),
        "affine": vol.affine.tolist(),
        "dtype": _DTYPE_TAGS[np.dtype(vol.voxels.dtype).name],
    }
    try:
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))
        path.with_suffix(".bin").write_bytes(
            np.ascontiguousarray(vol.voxels).astype(
                vol.voxels.dtype.newbyteorder("<")
            ).tobytes()
        )
    except OSError as e:
        raise VolumeIOError(f"cannot write sidecar pair for {path}: {e}") from e


def read_volume(path) -> Volume:
    """Read a .nii / .nii.gz file, or a .bin/.json sidecar pair."""
    path = Path(path)
    if not path.exists():
        raise VolumeIOError(f"no such file: {path}")
    if path.suffix in (".bin", ".json"):
        return _read_sidecar(path)
    return _read_nifti(path)


def write_volume(vol: Volume, path) -> None:
    """Write a volume; format chosen by extension.

    Writes go through a temp file plus atomic rename so a concurrent
    reader never sees a partial file.
    """
    path = Path(path)
    if path.suffix in (".bin", ".json"):
        _write_sidecar(vol, path)
        return
    gz = path.name.endswith(".gz")
    _atomic_write(path, _encode_nifti(vol), gz)
