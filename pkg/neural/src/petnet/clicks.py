"""Training-time click simulation.

Clicks follow the corrective rule of the evaluation harness: the first click
is positive inside the target; afterwards, the larger of the false-negative
and false-positive regions receives the next click (ties to FN), positive for
FN and negative for FP. Training picks a uniformly random voxel inside the
chosen region (evaluation uses the deterministic interior-most voxel; only
region membership is contractual).
"""

from __future__ import annotations

import numpy as np

Click = tuple[tuple[int, int, int], bool]  # (voxel index, is_positive)


def _random_voxel(region: np.ndarray, rng: np.random.Generator):
    flat = np.flatnonzero(region)
    pick = int(flat[rng.integers(0, flat.size)])
    return tuple(int(c) for c in np.unravel_index(pick, region.shape))


def first_click(target: np.ndarray, rng: np.random.Generator) -> Click:
    if not target.any():
        raise ValueError("target must be nonempty")
    return (_random_voxel(target, rng), True)


def corrective_click(
    target: np.ndarray, prediction: np.ndarray, rng: np.random.Generator
) -> Click | None:
    """Next click given the current binarized prediction; None if perfect."""
    fn = target & ~prediction
    fp = prediction & ~target
    n_fn = int(fn.sum())
    n_fp = int(fp.sum())
    if n_fn == 0 and n_fp == 0:
        return None
    if n_fn >= n_fp:
        return (_random_voxel(fn, rng), True)
    return (_random_voxel(fp, rng), False)
