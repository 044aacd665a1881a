"""Volumetric data model: intensity grids, masks, and point prompts.

Conventions used everywhere in this package:

* arrays are indexed ``[i, j, k]`` with shape ``(nx, ny, nz)``;
* the linear index of a voxel is ``i + nx * (j + ny * k)`` (x-fastest,
  the NIfTI on-disk order, i.e. numpy order ``'F'``);
* all coordinates are voxel indices; world millimeters appear only at
  I/O and reporting boundaries.

All types are immutable after construction (backing arrays are marked
read-only) so they can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

from .errors import BoundsError, ShapeMismatchError

Index3 = tuple[int, int, int]
Polarity = Literal["pos", "neg"]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _check_dims(dims) -> Index3:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"dims must be three positive ints, got {dims!r}")
    return dims


@dataclass(frozen=True)
class VoxelGrid:
    """A 3D scalar intensity volume (SUV) with spacing and affine geometry."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"grid data must be 3D, got shape {data.shape}")
        _check_dims(data.shape)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing components must be > 0, got {spacing!r}")
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValueError("affine must be a 4x4 matrix")
        if not np.isfinite(affine).all():
            raise ValueError("affine must be finite")
        if abs(np.linalg.det(affine)) < 1e-12:
            raise ValueError("affine must be invertible")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", _freeze(affine))

    @property
    def dims(self) -> Index3:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class BinaryMask:
    """Voxel-wise boolean segmentation target, same linearization as VoxelGrid."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.dtype != np.bool_:
            bits = bits.astype(bool)
        if bits.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {bits.shape}")
        _check_dims(bits.shape)
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def dims(self) -> Index3:
        return self.bits.shape  # type: ignore[return-value]

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self.bits, other.bits))


@dataclass(frozen=True)
class LabelMask:
    """Non-negative integer label per voxel; 0 is background."""

    labels: np.ndarray
    label_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"label volume must be 3D, got shape {labels.shape}")
        if labels.min(initial=0) < 0:
            raise ValueError("labels must be non-negative")
        if labels.max(initial=0) > np.iinfo(np.uint16).max:
            raise ValueError("label ids must fit in 16 bits")
        _check_dims(labels.shape)
        present = {int(v) for v in np.unique(labels) if v != 0}
        names = dict(self.label_names) or {v: str(v) for v in present}
        missing = present - names.keys()
        if missing:
            raise ValueError(f"labels {sorted(missing)} missing from label_names")
        object.__setattr__(self, "labels", _freeze(labels.astype(np.int32)))
        object.__setattr__(self, "label_names", names)

    @property
    def dims(self) -> Index3:
        return self.labels.shape  # type: ignore[return-value]

    def mask_for(self, label_ids: Iterable[int]) -> BinaryMask:
        """Binary mask of the union of the given label ids."""
        ids = list(label_ids)
        return BinaryMask(np.isin(self.labels, ids))


@dataclass(frozen=True, order=True)
class PointPrompt:
    """One click: voxel index, polarity, and the loop iteration it was issued at."""

    index: Index3
    polarity: Polarity
    iteration: int = 0

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(c) for c in self.index))
        if self.polarity not in ("pos", "neg"):
            raise ValueError(f"polarity must be 'pos' or 'neg', got {self.polarity!r}")
        if self.iteration < 0:
            raise ValueError("iteration must be >= 0")

    def validate_within(self, dims: Index3) -> None:
        for c, n in zip(self.index, dims):
            if not 0 <= c < n:
                raise BoundsError(f"prompt index {self.index} outside dims {dims}")


@dataclass(frozen=True)
class PromptSet:
    """Ordered accumulated prompts, sorted by iteration then insertion order."""

    prompts: tuple[PointPrompt, ...] = ()

    def __post_init__(self):
        prompts = tuple(self.prompts)
        its = [p.iteration for p in prompts]
        if any(a > b for a, b in zip(its, its[1:])):
            raise ValueError("prompt iterations must be non-decreasing")
        seen = set()
        for p in prompts:
            key = (p.index, p.polarity)
            if key in seen:
                raise ValueError(f"duplicate prompt {key}")
            seen.add(key)
        object.__setattr__(self, "prompts", prompts)

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)

    def with_prompt(self, prompt: PointPrompt) -> "PromptSet":
        return PromptSet(self.prompts + (prompt,))

    def contains(self, index: Index3, polarity: Polarity) -> bool:
        return any(p.index == tuple(index) and p.polarity == polarity for p in self.prompts)


def linear_index(i: int, j: int, k: int, dims: Index3) -> int:
    """Linear (x-fastest) index of voxel (i, j, k)."""
    nx, ny, nz = dims
    if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
        raise BoundsError(f"voxel ({i}, {j}, {k}) outside dims {dims}")
    return i + nx * (j + ny * k)


def unravel_index(lin: int, dims: Index3) -> Index3:
    """Inverse of linear_index."""
    nx, ny, nz = dims
    if not 0 <= lin < nx * ny * nz:
        raise BoundsError(f"linear index {lin} outside dims {dims}")
    i = lin % nx
    j = (lin // nx) % ny
    k = lin // (nx * ny)
    return (i, j, k)


def voxel_to_world(affine: np.ndarray, index) -> tuple[float, float, float]:
    """Map a voxel index to world millimeters through the affine."""
    hom = np.asarray(affine, dtype=np.float64) @ np.array([*index, 1.0])
    return (float(hom[0]), float(hom[1]), float(hom[2]))


def _require_same_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.dims != b.dims:
        raise ShapeMismatchError(f"mask dims differ: {a.dims} vs {b.dims}")


def mask_difference(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    """Set difference a \\ b."""
    _require_same_dims(a, b)
    return BinaryMask(a.bits & ~b.bits)


def mask_intersection(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _require_same_dims(a, b)
    return BinaryMask(a.bits & b.bits)


def mask_union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _require_same_dims(a, b)
    return BinaryMask(a.bits | b.bits)


def mask_volume(a: BinaryMask) -> int:
    """Number of true voxels."""
    return int(np.count_nonzero(a.bits))


def empty_mask(dims: Index3) -> BinaryMask:
    return BinaryMask(np.zeros(_check_dims(dims), dtype=bool))


def full_mask(dims: Index3) -> BinaryMask:
    return BinaryMask(np.ones(_check_dims(dims), dtype=bool))


def argmin_linear(flat_selectable: np.ndarray) -> int:
    """Smallest linear (x-fastest) index with a true entry; -1 if none."""
    order_f = np.flatnonzero(flat_selectable.ravel(order="F"))
    if order_f.size == 0:
        return -1
    return int(order_f[0])


def extract_block(
    data: np.ndarray, origin: Index3, edge: int, pad_value: float
) -> np.ndarray:
    """Cube of side ``edge`` starting at ``origin`` (which may be negative);
    voxels outside the grid are filled with ``pad_value``."""
    dims = data.shape
    block = np.full((edge, edge, edge), pad_value, dtype=np.float32)
    src = []
    dst = []
    for ax in range(3):
        lo = max(0, origin[ax])
        hi = min(dims[ax], origin[ax] + edge)
        if hi <= lo:
            return block
        src.append(slice(lo, hi))
        dst.append(slice(lo - origin[ax], hi - origin[ax]))
    block[tuple(dst)] = data[tuple(src)]
    return block
