"""Phantom-suite loading: a minimal single-file NIfTI-1 reader (the suite
interchange format) plus the adaptive crop/pad and flip augmentations of the
training protocol."""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_DTYPES = {2: "u1", 4: "i2", 16: "f4", 64: "f8"}


def read_nifti(path) -> np.ndarray:
    """Read a single-file little-endian NIfTI-1 volume (x-fastest order)."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    if len(blob) < 352:
        raise ValueError(f"{path}: too short for a NIfTI-1 file")
    if struct.unpack("<i", blob[:4])[0] != 348:
        raise ValueError(f"{path}: not little-endian NIfTI-1")
    if blob[344:348] != b"n+1\x00":
        raise ValueError(f"{path}: bad magic")
    dim = struct.unpack("<8h", blob[40:56])
    datatype = struct.unpack("<h", blob[70:72])[0]
    if datatype not in _DTYPES:
        raise ValueError(f"{path}: unsupported datatype {datatype}")
    vox_offset = int(struct.unpack("<f", blob[108:112])[0])
    shape = (dim[1], dim[2], dim[3])
    nvox = shape[0] * shape[1] * shape[2]
    data = np.frombuffer(blob, dtype="<" + _DTYPES[datatype],
                         count=nvox, offset=vox_offset)
    return data.reshape(shape, order="F")


@dataclass(frozen=True)
class Case:
    case_id: str
    volume: np.ndarray  # float32 SUV
    target: np.ndarray  # bool


def load_suite(manifest_path) -> list[Case]:
    """Load every case of a phantom-suite manifest (volume + pooled target)."""
    manifest_path = Path(manifest_path)
    entries = json.loads(manifest_path.read_text())
    cases = []
    for entry in entries:
        volume = read_nifti(manifest_path.parent / entry["volume"]).astype(np.float32)
        labels = read_nifti(manifest_path.parent / entry["labels"])
        wanted = entry["targets"][0]["labels"]
        target = np.isin(labels, wanted)
        cases.append(Case(case_id=entry["case_id"], volume=volume, target=target))
    return cases


def crop_pad_to(volume: np.ndarray, target: np.ndarray, edge: int,
                rng: np.random.Generator | None = None):
    """Adaptive crop/pad to edge^3, centered on the target's bounding box
    (with a small random jitter when rng is given); short axes get padding at
    the volume's minimum intensity."""
    dims = volume.shape
    coords = np.argwhere(target)
    if coords.size == 0:
        center = [d // 2 for d in dims]
    else:
        center = [(int(coords[:, a].min()) + int(coords[:, a].max())) // 2
                  for a in range(3)]
    pad_value = float(volume.min())
    out_vol = np.full((edge, edge, edge), pad_value, dtype=np.float32)
    out_tgt = np.zeros((edge, edge, edge), dtype=bool)
    origin = []
    for a in range(3):
        o = center[a] - edge // 2
        if rng is not None:
            o += int(rng.integers(-2, 3))
        if dims[a] >= edge:
            o = min(max(o, 0), dims[a] - edge)
        else:
            o = (dims[a] - edge) // 2
        origin.append(o)
    src, dst = [], []
    for a in range(3):
        lo = max(0, origin[a])
        hi = min(dims[a], origin[a] + edge)
        src.append(slice(lo, hi))
        dst.append(slice(lo - origin[a], hi - origin[a]))
    out_vol[tuple(dst)] = volume[tuple(src)]
    out_tgt[tuple(dst)] = target[tuple(src)]
    return out_vol, out_tgt


def random_flip(volume: np.ndarray, target: np.ndarray,
                rng: np.random.Generator, axes=(0, 1, 2)):
    """Random flips along the given axes, applied jointly to volume and mask."""
    for axis in axes:
        if rng.integers(0, 2):
            volume = np.flip(volume, axis=axis)
            target = np.flip(target, axis=axis)
    return np.ascontiguousarray(volume), np.ascontiguousarray(target)


def flip_clicks(clicks, dims, flipped_axes):
    """Mirror click coordinates for a set of flipped axes."""
    out = []
    for (i, j, k), pos in clicks:
        coord = [i, j, k]
        for axis in flipped_axes:
            coord[axis] = dims[axis] - 1 - coord[axis]
        out.append(((coord[0], coord[1], coord[2]), pos))
    return out
