"""Exact Euclidean distance transform for anisotropic voxel grids.

Separable squared-distance algorithm: one lower-envelope-of-parabolas pass
per axis. Each pass computes, for every 1D line, the exact minimum of
``(x - x_j)^2 + f(j)`` over the line, so after three passes every voxel
holds the exact squared Euclidean distance to the nearest seed voxel
center, with per-axis physical spacing respected.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_INF = np.inf


@njit(cache=True)
def _envelope_1d(f, d, v, z, n, s):
    # Lower envelope of parabolas rooted at (x_q, f[q]), x_q = q * s.
    # Entries with f[q] == inf carry no parabola.
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == _INF:
            continue
        xq = q * s
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -_INF
            z[1] = _INF
            continue
        while True:
            p = v[k]
            xp = p * s
            sq = (fq + xq * xq - f[p] - xp * xp) / (2.0 * (xq - xp))
            if sq <= z[k]:
                k -= 1  # z[0] = -inf, so k never drops below 0 here
            else:
                break
        k += 1
        v[k] = q
        z[k] = sq
        z[k + 1] = _INF
    if k < 0:
        for q in range(n):
            d[q] = _INF
        return
    kk = 0
    for q in range(n):
        x = q * s
        while z[kk + 1] < x:
            kk += 1
        p = v[kk]
        dx = x - p * s
        d[q] = dx * dx + f[p]


@njit(cache=True)
def _edt_sq_3d(seed, spacing):
    nx, ny, nz = seed.shape
    nmax = max(nx, max(ny, nz))
    dist = np.empty((nx, ny, nz), dtype=np.float64)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                dist[i, j, k] = 0.0 if seed[i, j, k] else _INF

    f = np.empty(nmax, dtype=np.float64)
    d = np.empty(nmax, dtype=np.float64)
    v = np.empty(nmax, dtype=np.int64)
    z = np.empty(nmax + 1, dtype=np.float64)

    sx, sy, sz = spacing[0], spacing[1], spacing[2]
    for j in range(ny):
        for k in range(nz):
            for i in range(nx):
                f[i] = dist[i, j, k]
            _envelope_1d(f, d, v, z, nx, sx)
            for i in range(nx):
                dist[i, j, k] = d[i]
    for i in range(nx):
        for k in range(nz):
            for j in range(ny):
                f[j] = dist[i, j, k]
            _envelope_1d(f, d, v, z, ny, sy)
            for j in range(ny):
                dist[i, j, k] = d[j]
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                f[k] = dist[i, j, k]
            _envelope_1d(f, d, v, z, nz, sz)
            for k in range(nz):
                dist[i, j, k] = d[k]
    return dist


def squared_distance_field(seed: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Exact squared distance (mm^2) from every voxel center to the nearest
    true voxel center of ``seed``. Voxels of an all-false seed come back inf.
    """
    seed = np.ascontiguousarray(np.asarray(seed, dtype=bool))
    sp = np.asarray(spacing, dtype=np.float64)
    if seed.ndim != 3:
        raise ValueError(f"seed must be 3D, got shape {seed.shape}")
    if sp.shape != (3,) or np.any(sp <= 0):
        raise ValueError(f"spacing must be three positive values, got {spacing!r}")
    return _edt_sq_3d(seed, sp)


def distance_field(seed: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Exact Euclidean distance in millimeters; requires a nonempty seed."""
    if not np.any(seed):
        raise ValueError("distance transform of an empty mask is undefined")
    return np.sqrt(squared_distance_field(seed, spacing))


def interior_depth(region: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Distance from each voxel to the region's complement, counting the
    outside of the grid as complement (consistent with boundary handling).
    """
    region = np.asarray(region, dtype=bool)
    outside = np.pad(~region, 1, mode="constant", constant_values=True)
    depth = np.sqrt(squared_distance_field(outside, spacing))
    return depth[1:-1, 1:-1, 1:-1]
