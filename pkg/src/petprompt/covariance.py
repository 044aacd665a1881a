"""Whole-body metabolic covariance network: across-subject Pearson
correlation of per-ROI mean uptake, thresholded into an edge list."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientSubjectsError, ShapeMismatchError
from .volume import BinaryMask, VoxelGrid, mask_volume


@dataclass(frozen=True)
class UptakeMatrix:
    """Subjects x ROIs matrix of mean SUV."""

    values: np.ndarray
    roi_names: tuple[str, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("uptake matrix must be 2D (subjects x rois)")
        if values.shape[1] != len(self.roi_names):
            raise ValueError("roi_names length must match column count")
        if values.shape[1] < 2:
            raise ValueError("need at least 2 ROIs")
        if not np.isfinite(values).all():
            raise ValueError("uptake matrix has missing or non-finite cells")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "roi_names", tuple(self.roi_names))

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_rois(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CovarianceNetwork:
    corr: np.ndarray  # m x m; degenerate rows/cols are 0 off-diagonal and on
    edges: tuple[tuple[str, str, float], ...]  # (roi_a, roi_b, r), |r| desc
    degenerate: tuple[str, ...]  # zero-variance ROIs
    roi_names: tuple[str, ...]


def roi_mean(grid: VoxelGrid, roi: BinaryMask) -> float:
    """Mean intensity over the ROI voxels."""
    if grid.dims != roi.dims:
        raise ShapeMismatchError(f"dims differ: {grid.dims} vs {roi.dims}")
    if mask_volume(roi) == 0:
        raise ValueError("ROI is empty")
    return float(np.asarray(grid.data, dtype=np.float64)[roi.bits].mean())


def build_network(uptake: UptakeMatrix, threshold: float = 0.3) -> CovarianceNetwork:
    """Pairwise Pearson r across subjects; zero-variance ROIs are flagged
    degenerate and excluded from edges so the output never contains NaN."""
    if uptake.n_subjects < 3:
        raise InsufficientSubjectsError(
            f"need >= 3 subjects, got {uptake.n_subjects}"
        )
    values = uptake.values
    m = uptake.n_rois
    centered = values - values.mean(axis=0, keepdims=True)
    norms = np.sqrt((centered**2).sum(axis=0))
    degenerate_idx = np.flatnonzero(norms == 0.0)
    degenerate = tuple(uptake.roi_names[i] for i in degenerate_idx)

    corr = np.zeros((m, m), dtype=np.float64)
    edges = []
    for a in range(m):
        if norms[a] == 0.0:
            continue
        corr[a, a] = 1.0
        for b in range(a + 1, m):
            if norms[b] == 0.0:
                continue
            r = float(np.dot(centered[:, a], centered[:, b]) / (norms[a] * norms[b]))
            r = min(1.0, max(-1.0, r))
            corr[a, b] = r
            corr[b, a] = r  # assigned once per unordered pair: exact symmetry
            if abs(r) >= threshold:
                edges.append((uptake.roi_names[a], uptake.roi_names[b], r))
    edges.sort(key=lambda e: (-abs(e[2]), e[0], e[1]))
    return CovarianceNetwork(
        corr=corr,
        edges=tuple(edges),
        degenerate=degenerate,
        roi_names=uptake.roi_names,
    )
