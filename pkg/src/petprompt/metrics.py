"""Segmentation quality metrics: voxel overlap (DSC), boundary agreement
(NSD at tolerance tau), connected components, and median/IQR aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from numba import njit

from .edt import distance_field, squared_distance_field
from .errors import ShapeMismatchError
from .volume import BinaryMask, LabelMask, mask_volume

TauUnit = Literal["mm", "voxel"]


@dataclass(frozen=True)
class MetricResult:
    """Per-case, per-target metric values."""

    dsc: float
    nsd: float
    tau: float
    target_name: str = ""
    case_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.dsc <= 1.0:
            raise ValueError(f"dsc out of [0,1]: {self.dsc}")
        if not 0.0 <= self.nsd <= 1.0:
            raise ValueError(f"nsd out of [0,1]: {self.nsd}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass(frozen=True)
class AggregateStat:
    """Median with interquartile range over a set of per-case values."""

    median: float
    q1: float
    q3: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("aggregate needs at least one value")
        if not self.q1 <= self.median <= self.q3:
            raise ValueError("quartiles out of order")

    def formatted(self, digits: int = 4) -> str:
        """Human table string, e.g. ``0.9262 (0.9156–0.9331)``."""
        return (
            f"{self.median:.{digits}f} "
            f"({self.q1:.{digits}f}–{self.q3:.{digits}f})"
        )


@dataclass(frozen=True)
class BoundaryBand:
    boundary: BinaryMask
    band: BinaryMask


def _require_same_dims(g: BinaryMask, s: BinaryMask) -> None:
    if g.dims != s.dims:
        raise ShapeMismatchError(f"mask dims differ: {g.dims} vs {s.dims}")


def dsc(g: BinaryMask, s: BinaryMask) -> float:
    """Dice similarity 2|G∩S| / (|G|+|S|); 1.0 when both masks are empty."""
    _require_same_dims(g, s)
    inter = int(np.count_nonzero(g.bits & s.bits))
    total = mask_volume(g) + mask_volume(s)
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def boundary_of(s: BinaryMask) -> BinaryMask:
    """Voxels of S with at least one 6-neighbor that is background or
    outside the grid."""
    bits = s.bits
    padded = np.pad(bits, 1, mode="constant", constant_values=False)
    core = (
        padded[:-2, 1:-1, 1:-1]
        & padded[2:, 1:-1, 1:-1]
        & padded[1:-1, :-2, 1:-1]
        & padded[1:-1, 2:, 1:-1]
        & padded[1:-1, 1:-1, :-2]
        & padded[1:-1, 1:-1, 2:]
    )
    return BinaryMask(bits & ~core)


def distance_transform(mask: BinaryMask, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Exact Euclidean distance (mm) from every voxel center to the nearest
    true voxel center of ``mask``; domain error on an empty mask."""
    return distance_field(mask.bits, spacing)


def boundary_band(s: BinaryMask, tau: float, spacing=(1.0, 1.0, 1.0)) -> BoundaryBand:
    """Boundary of S plus the set of voxels within tau of that boundary."""
    boundary = boundary_of(s)
    if mask_volume(boundary) == 0:
        return BoundaryBand(boundary=boundary, band=boundary)
    dist_sq = squared_distance_field(boundary.bits, spacing)
    return BoundaryBand(boundary=boundary, band=BinaryMask(dist_sq <= tau * tau))


def nsd(
    g: BinaryMask,
    s: BinaryMask,
    tau: float = 1.0,
    spacing=(1.0, 1.0, 1.0),
    tau_unit: TauUnit = "mm",
) -> float:
    """Normalized surface distance at tolerance tau.

    Fraction of boundary voxels of each mask lying within tau of the other
    mask's boundary:  (|∂S ∩ B_∂G| + |∂G ∩ B_∂S|) / (|∂S| + |∂G|).

    With ``tau_unit="mm"`` (default) the tolerance shares the spacing unit;
    ``"voxel"`` measures distances on the index lattice instead. Both-empty
    pairs score 1.0, exactly-one-empty pairs 0.0.
    """
    _require_same_dims(g, s)
    if tau <= 0:
        raise ValueError("tau must be > 0")
    g_empty = mask_volume(g) == 0
    s_empty = mask_volume(s) == 0
    if g_empty and s_empty:
        return 1.0
    if g_empty or s_empty:
        return 0.0
    sp = spacing if tau_unit == "mm" else (1.0, 1.0, 1.0)
    bg = boundary_of(g)
    bs = boundary_of(s)
    dist_sq_to_bg = squared_distance_field(bg.bits, sp)
    dist_sq_to_bs = squared_distance_field(bs.bits, sp)
    tau_sq = tau * tau
    s_hits = int(np.count_nonzero(bs.bits & (dist_sq_to_bg <= tau_sq)))
    g_hits = int(np.count_nonzero(bg.bits & (dist_sq_to_bs <= tau_sq)))
    return (s_hits + g_hits) / (mask_volume(bs) + mask_volume(bg))


_OFFSETS_6 = np.array(
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]],
    dtype=np.int64,
)
_OFFSETS_26 = np.array(
    [
        [di, dj, dk]
        for di in (-1, 0, 1)
        for dj in (-1, 0, 1)
        for dk in (-1, 0, 1)
        if (di, dj, dk) != (0, 0, 0)
    ],
    dtype=np.int64,
)


@njit(cache=True)
def _label_components(bits, offsets):
    nx, ny, nz = bits.shape
    labels = np.zeros((nx, ny, nz), dtype=np.int32)
    stack = np.empty(nx * ny * nz, dtype=np.int64)
    n_off = offsets.shape[0]
    count = 0
    # Scan order k-slowest/i-fastest == increasing linear (x-fastest) index,
    # so component ids are ordered by each component's smallest linear index.
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                if not bits[i, j, k] or labels[i, j, k] != 0:
                    continue
                count += 1
                top = 0
                stack[0] = i + nx * (j + ny * k)
                labels[i, j, k] = count
                while top >= 0:
                    lin = stack[top]
                    top -= 1
                    ci = lin % nx
                    cj = (lin // nx) % ny
                    ck = lin // (nx * ny)
                    for m in range(n_off):
                        pi = ci + offsets[m, 0]
                        pj = cj + offsets[m, 1]
                        pk = ck + offsets[m, 2]
                        if pi < 0 or pi >= nx or pj < 0 or pj >= ny or pk < 0 or pk >= nz:
                            continue
                        if bits[pi, pj, pk] and labels[pi, pj, pk] == 0:
                            labels[pi, pj, pk] = count
                            top += 1
                            stack[top] = pi + nx * (pj + ny * pk)
    return labels, count


def connected_components(mask: BinaryMask, connectivity: int = 26) -> tuple[LabelMask, int]:
    """Label the connected components of a mask, ids 1..N ordered by each
    component's smallest linear index; 0 is background."""
    if connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    offsets = _OFFSETS_6 if connectivity == 6 else _OFFSETS_26
    bits = np.ascontiguousarray(mask.bits)
    labels, count = _label_components(bits, offsets)
    names = {i: f"component_{i}" for i in range(1, count + 1)}
    return LabelMask(labels, names), count


def component_sizes(labels: LabelMask, count: int) -> np.ndarray:
    """Voxel count per component id (index 0 unused)."""
    sizes = np.bincount(labels.labels.ravel(), minlength=count + 1)
    return sizes


def aggregate(values: Sequence[float]) -> AggregateStat:
    """Median and quartiles via linear interpolation at position q*(n-1)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot aggregate an empty list")
    q1, med, q3 = np.quantile(arr, [0.25, 0.5, 0.75], method="linear")
    return AggregateStat(median=float(med), q1=float(q1), q3=float(q3), n=int(arr.size))
