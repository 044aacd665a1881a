"""Single-file NIfTI-1 reader/writer (.nii and .nii.gz).

Reads both byte orders (detected via sizeof_hdr), applies scl_slope/scl_inter
rescaling, and resolves the affine with priority sform > qform > pixdim
diagonal. Writes native-little-endian single-file volumes with a deterministic
header, so identical inputs produce identical bytes. NIfTI-2 and DICOM inputs
are rejected with explicit errors.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    NiftiFormatError,
    TruncatedFileError,
    UnsupportedDatatypeError,
)
from .volume import BinaryMask, LabelMask, VoxelGrid

HEADER_SIZE = 348
_HEADER_FMT = "i10s18sihcc8h3f4h8f3fhcc4f2i80s24s2h6f12f16s4s"

# datatype code -> numpy dtype (unprefixed; byte order applied at read time)
DTYPE_CODES = {2: "u1", 4: "i2", 16: "f4", 64: "f8"}
DTYPE_BITS = {2: 8, 4: 16, 16: 32, 64: 64}
_NUMPY_TO_CODE = {
    np.dtype(np.uint8): 2,
    np.dtype(np.int16): 4,
    np.dtype(np.float32): 16,
    np.dtype(np.float64): 64,
}

_MAGIC_SINGLE = b"n+1\x00"
_MAGIC_PAIR = b"ni1\x00"


@dataclass(frozen=True)
class NiftiHeader:
    """Parsed subset of the 348-byte NIfTI-1 header."""

    dim: tuple[int, ...]
    datatype: int
    bitpix: int
    pixdim: tuple[float, ...]
    vox_offset: int
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    quatern: tuple[float, float, float]
    qoffset: tuple[float, float, float]
    srow: np.ndarray  # 3x4
    magic: bytes
    byte_order: str  # "<" or ">"

    @property
    def shape(self) -> tuple[int, int, int]:
        nd = self.dim[0]
        nx = self.dim[1] if nd >= 1 else 1
        ny = self.dim[2] if nd >= 2 else 1
        nz = self.dim[3] if nd >= 3 else 1
        return (nx, ny, nz)

    def affine(self) -> np.ndarray:
        if self.sform_code > 0:
            aff = np.eye(4)
            aff[:3, :] = self.srow
            return aff
        if self.qform_code > 0:
            return _qform_affine(self.quatern, self.qoffset, self.pixdim)
        return np.diag([self.pixdim[1], self.pixdim[2], self.pixdim[3], 1.0])


def _qform_affine(quatern, qoffset, pixdim) -> np.ndarray:
    b, c, d = quatern
    a_sq = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a_sq) if a_sq > 0 else 0.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    scale = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    aff = np.eye(4)
    aff[:3, :3] = rot * scale[np.newaxis, :]
    aff[:3, 3] = qoffset
    return aff


def _open_maybe_gzip(path: Path, mode: str = "rb"):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _write_bytes(path: Path, blob: bytes) -> None:
    if str(path).endswith(".gz"):
        # mtime pinned so rewriting the same volume gives identical bytes
        blob = gzip.compress(blob, mtime=0)
    path.write_bytes(blob)


def read_header(path) -> NiftiHeader:
    """Parse and validate the header; no payload bytes are touched."""
    path = Path(path)
    with _open_maybe_gzip(path) as fh:
        raw = fh.read(HEADER_SIZE)
    return parse_header(raw)


def parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) >= 132 and raw[128:132] == b"DICM":
        raise NiftiFormatError("file is DICOM, not NIfTI-1; convert upstream")
    if len(raw) < HEADER_SIZE:
        raise TruncatedFileError(f"header is {len(raw)} bytes, need {HEADER_SIZE}")
    size_le = struct.unpack("<i", raw[:4])[0]
    size_be = struct.unpack(">i", raw[:4])[0]
    if size_le == HEADER_SIZE:
        order = "<"
    elif size_be == HEADER_SIZE:
        order = ">"
    elif 540 in (size_le, size_be):
        raise NiftiFormatError("NIfTI-2 (540-byte header) is not supported")
    else:
        raise NiftiFormatError(
            f"bad sizeof_hdr {size_le} (not NIfTI-1; expected {HEADER_SIZE})"
        )

    fields = struct.unpack(order + _HEADER_FMT, raw)
    dim = fields[7:15]
    intent_code, datatype, bitpix, slice_start = fields[18:22]
    pixdim = fields[22:30]
    vox_offset, scl_slope, scl_inter = fields[30:33]
    qform_code, sform_code = fields[44:46]
    quatern = fields[46:49]
    qoffset = fields[49:52]
    srow = np.array(fields[52:64], dtype=np.float64).reshape(3, 4)
    magic = fields[65]

    if magic not in (_MAGIC_SINGLE, _MAGIC_PAIR):
        raise NiftiFormatError(f"bad magic {magic!r}")
    nd = dim[0]
    if not 1 <= nd <= 7:
        raise NiftiFormatError(f"dim[0] must be in [1,7], got {nd}")
    if nd >= 3 and any(pixdim[ax] <= 0 for ax in (1, 2, 3)):
        raise NiftiFormatError(f"non-positive pixdim {pixdim[1:4]}")

    return NiftiHeader(
        dim=tuple(int(v) for v in dim),
        datatype=int(datatype),
        bitpix=int(bitpix),
        pixdim=tuple(float(v) for v in pixdim),
        vox_offset=int(round(vox_offset)),
        scl_slope=float(scl_slope),
        scl_inter=float(scl_inter),
        qform_code=int(qform_code),
        sform_code=int(sform_code),
        quatern=tuple(float(v) for v in quatern),
        qoffset=tuple(float(v) for v in qoffset),
        srow=srow,
        magic=magic,
        byte_order=order,
    )


def read_volume(path) -> VoxelGrid:
    """Read a single-file NIfTI-1 volume into a VoxelGrid.

    Intensities are rescaled as value*scl_slope + scl_inter when scl_slope
    is neither 0 nor the identity pair (1, 0); otherwise raw values are
    returned in their native dtype so round-trips stay bit-exact.
    """
    path = Path(path)
    with _open_maybe_gzip(path) as fh:
        raw = fh.read(HEADER_SIZE)
        header = parse_header(raw)
        if header.magic == _MAGIC_PAIR:
            raise NiftiFormatError(
                "two-file (.hdr/.img) NIfTI is not supported; use single-file .nii"
            )
        if header.datatype not in DTYPE_CODES:
            raise UnsupportedDatatypeError(
                f"datatype code {header.datatype} unsupported "
                f"(supported: {sorted(DTYPE_CODES)})"
            )
        if header.bitpix != DTYPE_BITS[header.datatype]:
            raise NiftiFormatError(
                f"bitpix {header.bitpix} inconsistent with datatype {header.datatype}"
            )
        nd = header.dim[0]
        extra = [header.dim[ax] for ax in range(4, nd + 1)]
        if any(e > 1 for e in extra):
            raise UnsupportedDatatypeError("only 3D volumes are supported")
        shape = header.shape
        nvox = shape[0] * shape[1] * shape[2]
        nbytes = nvox * header.bitpix // 8
        skip = header.vox_offset - HEADER_SIZE
        if skip < 0:
            raise NiftiFormatError(f"vox_offset {header.vox_offset} before header end")
        fh.read(skip)
        payload = fh.read(nbytes)
    if len(payload) < nbytes:
        raise TruncatedFileError(
            f"payload is {len(payload)} bytes, header promises {nbytes}"
        )

    dtype = np.dtype(header.byte_order + DTYPE_CODES[header.datatype])
    data = np.frombuffer(payload, dtype=dtype).reshape(shape, order="F")
    if header.byte_order == ">":
        data = data.astype(data.dtype.newbyteorder("<"))
    slope, inter = header.scl_slope, header.scl_inter
    if slope != 0.0 and not (slope == 1.0 and inter == 0.0):
        out_dtype = np.float64 if header.datatype == 64 else np.float32
        data = (data.astype(out_dtype) * out_dtype(slope)) + out_dtype(inter)

    spacing = tuple(header.pixdim[ax] for ax in (1, 2, 3))
    return VoxelGrid(data=data, spacing=spacing, affine=header.affine())


def _pack_header(shape, spacing, affine, datatype: int) -> bytes:
    dim = [3, shape[0], shape[1], shape[2], 1, 1, 1, 1]
    pixdim = [1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0]
    srow = np.asarray(affine, dtype=np.float64)[:3, :].ravel()
    return struct.pack(
        "<" + _HEADER_FMT,
        HEADER_SIZE,
        b"",
        b"",
        0,
        0,
        b"\x00",
        b"\x00",
        *dim,
        0.0,
        0.0,
        0.0,
        0,  # intent_code
        datatype,
        DTYPE_BITS[datatype],
        0,  # slice_start
        *pixdim,
        352.0,  # vox_offset
        1.0,  # scl_slope
        0.0,  # scl_inter
        0,
        b"\x00",
        b"\x00",
        0.0,
        0.0,
        0.0,
        0.0,
        0,
        0,
        b"petprompt",
        b"",
        0,  # qform_code
        1,  # sform_code
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        *srow,
        b"",
        _MAGIC_SINGLE,
    )


def write_volume(path, grid: VoxelGrid) -> None:
    """Write a VoxelGrid as a single-file NIfTI-1 volume.

    The on-disk datatype is the grid's dtype (uint8/int16/float32/float64);
    anything else is rejected rather than silently cast.
    """
    code = _NUMPY_TO_CODE.get(grid.data.dtype.newbyteorder("="))
    if code is None:
        raise UnsupportedDatatypeError(
            f"cannot write dtype {grid.data.dtype}; "
            f"supported: uint8, int16, float32, float64"
        )
    header = _pack_header(grid.dims, grid.spacing, grid.affine, code)
    payload = np.asarray(grid.data, dtype=grid.data.dtype.newbyteorder("<")).tobytes(
        order="F"
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # 4 zero bytes = no extensions; data starts at vox_offset 352
    _write_bytes(path, header + b"\x00\x00\x00\x00" + payload)


def write_mask(path, mask: BinaryMask, geometry: VoxelGrid) -> None:
    """Write a binary mask as uint8 {0,1} with the geometry of its grid."""
    if mask.dims != geometry.dims:
        raise NiftiFormatError(
            f"mask dims {mask.dims} do not match geometry dims {geometry.dims}"
        )
    grid = VoxelGrid(
        data=mask.bits.astype(np.uint8),
        spacing=geometry.spacing,
        affine=geometry.affine,
    )
    write_volume(path, grid)


def write_labels(path, labels: LabelMask, geometry: VoxelGrid) -> None:
    """Write a label volume as int16 (label ids fit in 16 bits)."""
    if labels.dims != geometry.dims:
        raise NiftiFormatError(
            f"label dims {labels.dims} do not match geometry dims {geometry.dims}"
        )
    grid = VoxelGrid(
        data=labels.labels.astype(np.int16),
        spacing=geometry.spacing,
        affine=geometry.affine,
    )
    write_volume(path, grid)


def read_mask(path) -> tuple[BinaryMask, VoxelGrid]:
    """Read a mask volume; returns the mask and its geometry grid."""
    grid = read_volume(path)
    return BinaryMask(np.asarray(grid.data) != 0), grid


def read_labels(path, label_names=None) -> tuple[LabelMask, VoxelGrid]:
    grid = read_volume(path)
    labels = np.asarray(grid.data)
    if not np.issubdtype(labels.dtype, np.integer):
        labels = np.rint(labels).astype(np.int32)
    return LabelMask(labels, label_names or {}), grid
